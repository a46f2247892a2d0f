// SPDX-License-Identifier: Apache-2.0
//
// Internal JSON conversions shared by the file formats.

#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "slam/error.hpp"
#include "slam/model.hpp"

namespace slam {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},
                     {"d_model", c.d_model},
                     {"n_heads", c.n_heads},
                     {"d_inter", c.d_inter},
                     {"vocab_size", c.vocab_size},
                     {"max_seq_len", c.max_seq_len},
                     {"seed", c.seed},
                     {"tied_output", c.tied_output},
                     {"activation", std::string(to_string(c.activation))},
                     {"rope_base", c.rope_base},
                     {"norm_eps", c.norm_eps},
                     {"embedding_init_std", c.embedding_init_std}};
}

// Missing keys keep their defaults so that partial configs can be layered.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_inter = j.value("d_inter", c.d_inter);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.seed = j.value("seed", c.seed);
  c.tied_output = j.value("tied_output", c.tied_output);
  if (j.contains("activation")) {
    c.activation = activation_from_string(j.at("activation").get<std::string>());
  }
  c.rope_base = j.value("rope_base", c.rope_base);
  c.norm_eps = j.value("norm_eps", c.norm_eps);
  c.embedding_init_std = j.value("embedding_init_std", c.embedding_init_std);
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace slam
