#pragma once

#include <string>

#include "dilocox/engine.hpp"

namespace dilocox {

// Flat sectioned key = value config mirroring EngineConfig plus dataset
// input and output locations. Unknown keys are rejected by name; the
// resolved form (all defaults materialized) can be written back out.
struct FullConfig {
  EngineConfig engine;

  DataKind data_kind = DataKind::CharCorpus;
  std::string corpus_path;
  int64_t max_bytes = 1 << 20;
  double eval_fraction = 0.05;
  int64_t synth_samples = 4096;
  int synth_in = 32;
  int synth_out = 8;
  int synth_teacher_hidden = 16;

  std::string output_dir = "out";

  void validate() const;
};

FullConfig parse_config_text(const std::string& text, const std::string& origin);
FullConfig parse_config_file(const std::string& path);

// Every key with its effective value, ready to be written next to outputs.
std::string resolved_config_text(const FullConfig& cfg);

// Loads or synthesizes the dataset the config names. For char-lm models the
// model vocab_size is filled in from the data.
Dataset load_dataset(FullConfig& cfg);

}  // namespace dilocox
