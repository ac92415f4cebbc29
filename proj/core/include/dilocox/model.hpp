#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dilocox/data.hpp"
#include "dilocox/params.hpp"
#include "dilocox/rng.hpp"

namespace dilocox {

enum class ModelKind { Mlp, CharLm };
enum class Activation { Tanh, Relu };

ModelKind model_kind_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);
std::string to_string(ModelKind k);
std::string to_string(Activation a);

// mlp: `widths` is the full dense chain [in, hidden..., out].
// char-lm: `widths` holds the hidden widths; the dense chain is
// [seq_len*emb_dim, widths..., vocab_size] behind a token embedding.
struct ModelSpec {
  ModelKind kind = ModelKind::Mlp;
  std::vector<int> widths;
  Activation activation = Activation::Tanh;
  int vocab_size = 0;
  int seq_len = 0;
  int emb_dim = 0;
  // mlp only: when > 0 the output is class logits trained with cross-entropy
  // against integer targets instead of MSE.
  int classes = 0;

  void validate() const;
  std::vector<int64_t> dense_dims() const;  // dims through the dense chain
  int dense_layers() const { return static_cast<int>(dense_dims().size()) - 1; }
  bool has_embedding() const { return kind == ModelKind::CharLm; }
};

ModelSpec mlp_spec(std::vector<int> widths, Activation act = Activation::Tanh);
ModelSpec char_lm_spec(int vocab_size, int seq_len, int emb_dim, std::vector<int> hidden,
                       Activation act = Activation::Tanh);

// Deterministic init: weights uniform with scale 1/sqrt(fan_in), biases zero,
// embedding rows uniform in [-1, 1]. Same seed gives bit-identical params.
ParamSet build_model(const ModelSpec& spec, RngStream& rng);
ParamSet build_model(const ModelSpec& spec, uint64_t seed);

struct StagePlan {
  int stages = 1;
  std::vector<int> layer_to_stage;                 // dense layer -> stage, monotone
  std::vector<std::pair<int, int>> stage_ranges;   // [lo, hi) dense layers per stage
  std::vector<int64_t> stage_param_counts;
};

// Contiguous layer ranges with greedily balanced parameter counts. The
// char-lm embedding table counts toward the first dense layer.
StagePlan partition_stages(const ModelSpec& spec, int m);

struct ForwardBackwardResult {
  double loss = 0.0;
  ParamSet grads;
};

ForwardBackwardResult forward_backward(const ModelSpec& spec, const ParamSet& params,
                                       const Batch& batch);

// Forward pass only.
double forward_loss(const ModelSpec& spec, const ParamSet& params, const Batch& batch);

struct PipelineResult {
  double loss = 0.0;
  std::vector<ParamSet> stage_grads;
  // Forward activation bytes crossing each stage boundary (batch*width*4);
  // the backward pass moves the same volume again.
  std::vector<int64_t> boundary_forward_bytes;
};

PipelineResult pipeline_forward_backward(const ModelSpec& spec, const ParamSet& params,
                                         const StagePlan& plan, const Batch& batch);

ParamSet merge_stage_grads(const ParamSet& like, const std::vector<ParamSet>& fragments);

// Checkpoint file: little-endian header (names, shapes) + raw FP32 payloads.
void save_checkpoint(const std::string& path, const ParamSet& params);
ParamSet load_checkpoint(const std::string& path);

}  // namespace dilocox
