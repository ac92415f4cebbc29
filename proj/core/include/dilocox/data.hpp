#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dilocox/rng.hpp"
#include "dilocox/tensor.hpp"

namespace dilocox {

enum class DataKind { CharCorpus, SyntheticRegression, SyntheticClassification };

DataKind data_kind_from_string(const std::string& s);
std::string to_string(DataKind k);

// Immutable after construction; safe for concurrent reads.
struct Dataset {
  DataKind kind = DataKind::CharCorpus;

  // char-corpus: byte-level token ids and the deterministic vocabulary
  // (distinct bytes in sorted order).
  std::vector<int32_t> tokens;
  std::vector<uint8_t> vocab_bytes;
  int vocab_size = 0;

  // synthetic: one row per sample.
  Tensor features;  // n x in_dim
  Tensor targets;   // n x out_dim (regression) or n x 1 class ids (classification)

  int64_t length() const {
    return kind == DataKind::CharCorpus ? static_cast<int64_t>(tokens.size()) : features.rows();
  }
};

struct Batch {
  Tensor inputs;
  Tensor targets;
  int64_t token_count = 0;
};

// Byte-level load of a corpus file, truncated to max_bytes.
Dataset load_corpus(const std::string& path, int64_t max_bytes);
Dataset corpus_from_bytes(const std::vector<uint8_t>& bytes);

// Teacher-student synthetic tasks: a fixed seeded two-layer tanh teacher
// produces learnable targets, so convergence tests have a known objective.
Dataset make_synthetic_regression(int64_t samples, int in_dim, int out_dim, int teacher_hidden,
                                  uint64_t seed);
Dataset make_synthetic_classification(int64_t samples, int in_dim, int classes, int teacher_hidden,
                                      uint64_t seed);

// Contiguous shard i of D; the trailing remainder (< D tokens/rows) is dropped.
Dataset shard(const Dataset& ds, int d, int i);

// First (1 - eval_fraction) of the data for training, the tail held out.
std::pair<Dataset, Dataset> split_train_eval(const Dataset& ds, double eval_fraction);

// Writes the window starting at `offset` into batch row `row`: inputs are
// tokens[offset, offset+seq_len), targets the same window shifted by one.
void fill_window(const Dataset& ds, int64_t offset, int seq_len, int64_t row, Tensor& inputs,
                 Tensor& targets);

// char-corpus: `batch` windows with offsets drawn from rng.
// synthetic: `batch` rows drawn from rng.
Batch next_batch(const Dataset& ds, RngStream& rng, int batch, int seq_len);

// Evenly spaced windows (or leading rows), independent of any rng.
Batch fixed_eval_batch(const Dataset& ds, int windows, int seq_len);

// Deterministic word-soup text for demos and tests (plain ASCII sentences).
// drift > 0 slides the word distribution along the text, giving contiguous
// shards genuinely different statistics.
std::vector<uint8_t> demo_corpus_bytes(int64_t target_bytes, uint64_t seed);
std::vector<uint8_t> demo_corpus_bytes(int64_t target_bytes, uint64_t seed, double drift);
void write_demo_corpus(const std::string& path, int64_t target_bytes, uint64_t seed);

}  // namespace dilocox
