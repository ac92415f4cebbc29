#include "dilocox/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "wire.hpp"

namespace dilocox {

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mlp") return ModelKind::Mlp;
  if (s == "char-lm") return ModelKind::CharLm;
  throw ValidationError("unknown model kind: " + s);
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw ValidationError("unknown activation: " + s);
}

std::string to_string(ModelKind k) { return k == ModelKind::Mlp ? "mlp" : "char-lm"; }
std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

void ModelSpec::validate() const {
  for (int w : widths)
    if (w <= 0) throw ValidationError("model widths must be positive");
  if (kind == ModelKind::Mlp) {
    if (widths.size() < 3) throw ValidationError("mlp needs at least two dense layers");
    if (classes > 0 && widths.back() != classes)
      throw ValidationError("mlp output width must equal class count");
  } else {
    if (vocab_size < 2) throw ValidationError("char-lm needs vocab_size >= 2");
    if (seq_len < 1) throw ValidationError("char-lm needs seq_len >= 1");
    if (emb_dim < 1) throw ValidationError("char-lm needs emb_dim >= 1");
    if (widths.empty()) throw ValidationError("char-lm needs at least one hidden width");
  }
}

std::vector<int64_t> ModelSpec::dense_dims() const {
  std::vector<int64_t> dims;
  if (kind == ModelKind::Mlp) {
    dims.assign(widths.begin(), widths.end());
  } else {
    dims.push_back(static_cast<int64_t>(seq_len) * emb_dim);
    for (int w : widths) dims.push_back(w);
    dims.push_back(vocab_size);
  }
  return dims;
}

ModelSpec mlp_spec(std::vector<int> widths, Activation act) {
  ModelSpec s;
  s.kind = ModelKind::Mlp;
  s.widths = std::move(widths);
  s.activation = act;
  s.validate();
  return s;
}

ModelSpec char_lm_spec(int vocab_size, int seq_len, int emb_dim, std::vector<int> hidden,
                       Activation act) {
  ModelSpec s;
  s.kind = ModelKind::CharLm;
  s.vocab_size = vocab_size;
  s.seq_len = seq_len;
  s.emb_dim = emb_dim;
  s.widths = std::move(hidden);
  s.activation = act;
  s.validate();
  return s;
}

ParamSet build_model(const ModelSpec& spec, RngStream& rng) {
  spec.validate();
  ParamSet p;
  if (spec.has_embedding())
    p.add("embed", Tensor::uniform({spec.vocab_size, spec.emb_dim}, -1.0f, 1.0f, rng));
  const auto dims = spec.dense_dims();
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    const float scale = 1.0f / std::sqrt(static_cast<float>(dims[l]));
    p.add("w" + std::to_string(l + 1), Tensor::uniform({dims[l], dims[l + 1]}, -scale, scale, rng));
    p.add("b" + std::to_string(l + 1), Tensor::zeros({dims[l + 1]}));
  }
  return p;
}

ParamSet build_model(const ModelSpec& spec, uint64_t seed) {
  RngStream rng(seed, stream_key({0x6d0de1u}));
  return build_model(spec, rng);
}

StagePlan partition_stages(const ModelSpec& spec, int m) {
  spec.validate();
  const int layers = spec.dense_layers();
  if (m < 1) throw ValidationError("stage count must be >= 1");
  if (m > layers) throw ValidationError("stage count exceeds layer count");

  const auto dims = spec.dense_dims();
  std::vector<int64_t> layer_params(static_cast<size_t>(layers));
  for (int l = 0; l < layers; ++l)
    layer_params[static_cast<size_t>(l)] = dims[static_cast<size_t>(l)] * dims[static_cast<size_t>(l) + 1] + dims[static_cast<size_t>(l) + 1];
  if (spec.has_embedding())
    layer_params[0] += static_cast<int64_t>(spec.vocab_size) * spec.emb_dim;

  StagePlan plan;
  plan.stages = m;
  plan.layer_to_stage.assign(static_cast<size_t>(layers), 0);
  int64_t remaining = 0;
  for (int64_t v : layer_params) remaining += v;

  int next_layer = 0;
  for (int s = 0; s < m; ++s) {
    const int stages_left = m - s;
    const int64_t budget = remaining / stages_left;
    const int lo = next_layer;
    int64_t taken = 0;
    // Take at least one layer; keep taking while under budget and enough
    // layers remain for the later stages.
    while (next_layer < layers && (layers - next_layer) > (stages_left - 1)) {
      if (taken > 0 && taken + layer_params[static_cast<size_t>(next_layer)] / 2 >= budget) break;
      taken += layer_params[static_cast<size_t>(next_layer)];
      ++next_layer;
    }
    if (next_layer == lo) {
      taken += layer_params[static_cast<size_t>(next_layer)];
      ++next_layer;
    }
    plan.stage_ranges.emplace_back(lo, next_layer);
    plan.stage_param_counts.push_back(taken);
    for (int l = lo; l < next_layer; ++l) plan.layer_to_stage[static_cast<size_t>(l)] = s;
    remaining -= taken;
  }
  return plan;
}

namespace {

void apply_activation(Tensor& z, Tensor& a, Activation act) {
  a = z;
  if (act == Activation::Tanh) {
    for (float& v : a.values()) v = std::tanh(v);
  } else {
    for (float& v : a.values()) v = v > 0.0f ? v : 0.0f;
  }
}

void activation_backward(const Tensor& z, const Tensor& a, Activation act, Tensor& grad) {
  const int64_t n = grad.size();
  if (act == Activation::Tanh) {
    for (int64_t i = 0; i < n; ++i) grad[i] *= 1.0f - a[i] * a[i];
  } else {
    for (int64_t i = 0; i < n; ++i) grad[i] = z[i] > 0.0f ? grad[i] : 0.0f;
  }
}

void add_bias(Tensor& z, const Tensor& b) {
  const int64_t rows = z.rows(), cols = z.cols();
  const float* pb = b.data();
  for (int64_t i = 0; i < rows; ++i) {
    float* row = z.data() + i * cols;
    for (int64_t j = 0; j < cols; ++j) row[j] += pb[j];
  }
}

Tensor bias_grad(const Tensor& dz) {
  const int64_t rows = dz.rows(), cols = dz.cols();
  std::vector<double> acc(static_cast<size_t>(cols), 0.0);
  for (int64_t i = 0; i < rows; ++i) {
    const float* row = dz.data() + i * cols;
    for (int64_t j = 0; j < cols; ++j) acc[static_cast<size_t>(j)] += static_cast<double>(row[j]);
  }
  Tensor g({cols});
  for (int64_t j = 0; j < cols; ++j) g[j] = static_cast<float>(acc[static_cast<size_t>(j)]);
  return g;
}

// Embedding lookup: rows of ids (B x L) gathered into B x (L*emb).
Tensor embed_forward(const Tensor& ids, const Tensor& table, int seq_len, int emb) {
  const int64_t batch = ids.rows();
  Tensor x({batch, static_cast<int64_t>(seq_len) * emb});
  for (int64_t b = 0; b < batch; ++b) {
    for (int j = 0; j < seq_len; ++j) {
      const int64_t id = static_cast<int64_t>(ids.at(b, j));
      if (id < 0 || id >= table.rows()) throw ValidationError("token id outside vocabulary");
      std::copy_n(table.data() + id * emb, emb, x.data() + b * (seq_len * emb) + static_cast<int64_t>(j) * emb);
    }
  }
  return x;
}

void embed_backward(const Tensor& ids, const Tensor& dx, int seq_len, int emb, Tensor& dtable) {
  const int64_t batch = ids.rows();
  for (int64_t b = 0; b < batch; ++b) {
    for (int j = 0; j < seq_len; ++j) {
      const int64_t id = static_cast<int64_t>(ids.at(b, j));
      const float* src = dx.data() + b * (seq_len * emb) + static_cast<int64_t>(j) * emb;
      float* dst = dtable.data() + id * emb;
      for (int e = 0; e < emb; ++e) dst[e] += src[e];
    }
  }
}

struct LossHead {
  double loss = 0.0;
  Tensor dlogits;
};

// Mean cross-entropy over rows, softmax in double per row.
LossHead cross_entropy_head(const Tensor& logits, const std::vector<int64_t>& target_ids) {
  const int64_t batch = logits.rows(), v = logits.cols();
  LossHead out;
  out.dlogits = Tensor({batch, v});
  double total = 0.0;
  const float inv_batch = 1.0f / static_cast<float>(batch);
  std::vector<double> prob(static_cast<size_t>(v));
  for (int64_t i = 0; i < batch; ++i) {
    const float* row = logits.data() + i * v;
    double mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0.0;
    for (int64_t j = 0; j < v; ++j) {
      prob[static_cast<size_t>(j)] = std::exp(static_cast<double>(row[j]) - mx);
      denom += prob[static_cast<size_t>(j)];
    }
    const int64_t t = target_ids[static_cast<size_t>(i)];
    if (t < 0 || t >= v) throw ValidationError("target id outside vocabulary");
    total += -(static_cast<double>(row[t]) - mx - std::log(denom));
    float* drow = out.dlogits.data() + i * v;
    for (int64_t j = 0; j < v; ++j)
      drow[j] = (static_cast<float>(prob[static_cast<size_t>(j)] / denom) - (j == t ? 1.0f : 0.0f)) * inv_batch;
  }
  out.loss = total / static_cast<double>(batch);
  return out;
}

LossHead mse_head(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) throw ShapeError("mse: prediction/target shapes disagree");
  LossHead out;
  out.dlogits = Tensor(pred.shape());
  const int64_t n = pred.size();
  const float inv = 1.0f / static_cast<float>(n);
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    total += d * d;
    out.dlogits[i] = 2.0f * (pred[i] - target[i]) * inv;
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

std::vector<int64_t> head_targets(const ModelSpec& spec, const Batch& batch) {
  const int64_t batch_rows = batch.targets.rows();
  std::vector<int64_t> ids(static_cast<size_t>(batch_rows));
  if (spec.kind == ModelKind::CharLm) {
    // The model predicts the token following the window; that is the last
    // column of the shift-by-one target window.
    const int64_t last = batch.targets.cols() - 1;
    for (int64_t i = 0; i < batch_rows; ++i)
      ids[static_cast<size_t>(i)] = static_cast<int64_t>(batch.targets.at(i, last));
  } else {
    for (int64_t i = 0; i < batch_rows; ++i)
      ids[static_cast<size_t>(i)] = static_cast<int64_t>(batch.targets.at(i, 0));
  }
  return ids;
}

}  // namespace

PipelineResult pipeline_forward_backward(const ModelSpec& spec, const ParamSet& params,
                                         const StagePlan& plan, const Batch& batch) {
  spec.validate();
  const auto dims = spec.dense_dims();
  const int layers = spec.dense_layers();
  if (static_cast<int>(plan.layer_to_stage.size()) != layers)
    throw ValidationError("stage plan does not match the model spec");

  const bool ce = (spec.kind == ModelKind::CharLm) || (spec.classes > 0);
  if (spec.kind == ModelKind::CharLm && batch.inputs.cols() != spec.seq_len)
    throw ShapeError("batch seq_len does not match the model spec");
  if (spec.kind == ModelKind::Mlp && batch.inputs.cols() != dims[0])
    throw ShapeError("batch width does not match the model input");

  // ----- forward, stage by stage -----
  Tensor x;
  if (spec.has_embedding()) {
    const Tensor* table = params.find("embed");
    if (table == nullptr) throw ValidationError("missing embedding table");
    x = embed_forward(batch.inputs, *table, spec.seq_len, spec.emb_dim);
  } else {
    x = batch.inputs;
  }

  std::vector<Tensor> layer_in(static_cast<size_t>(layers));
  std::vector<Tensor> layer_z(static_cast<size_t>(layers));
  std::vector<Tensor> layer_a(static_cast<size_t>(layers));

  PipelineResult out;
  for (int s = 0; s < plan.stages; ++s) {
    const auto [lo, hi] = plan.stage_ranges[static_cast<size_t>(s)];
    for (int l = lo; l < hi; ++l) {
      const Tensor* w = params.find("w" + std::to_string(l + 1));
      const Tensor* b = params.find("b" + std::to_string(l + 1));
      if (w == nullptr || b == nullptr) throw ValidationError("missing dense layer parameters");
      layer_in[static_cast<size_t>(l)] = x;
      Tensor z = matmul(x, *w);
      add_bias(z, *b);
      if (l + 1 < layers) {
        apply_activation(z, layer_a[static_cast<size_t>(l)], spec.activation);
      } else {
        layer_a[static_cast<size_t>(l)] = z;  // linear output head
      }
      layer_z[static_cast<size_t>(l)] = std::move(z);
      x = layer_a[static_cast<size_t>(l)];
    }
    if (s + 1 < plan.stages)
      out.boundary_forward_bytes.push_back(x.rows() * x.cols() * static_cast<int64_t>(sizeof(float)));
  }

  // ----- loss head -----
  LossHead head;
  if (ce) {
    head = cross_entropy_head(x, head_targets(spec, batch));
  } else {
    head = mse_head(x, batch.targets);
  }
  if (!std::isfinite(head.loss))
    throw NumericError("non-finite loss (model diverged); loss head reported " + std::to_string(head.loss));
  out.loss = head.loss;

  // ----- backward, reverse stage order -----
  out.stage_grads.assign(static_cast<size_t>(plan.stages), ParamSet{});
  Tensor dx = std::move(head.dlogits);
  for (int s = plan.stages - 1; s >= 0; --s) {
    const auto [lo, hi] = plan.stage_ranges[static_cast<size_t>(s)];
    std::vector<std::pair<std::string, Tensor>> grads_rev;
    for (int l = hi - 1; l >= lo; --l) {
      if (l + 1 < layers) activation_backward(layer_z[static_cast<size_t>(l)], layer_a[static_cast<size_t>(l)], spec.activation, dx);
      const Tensor* w = params.find("w" + std::to_string(l + 1));
      Tensor dw = matmul_tn(layer_in[static_cast<size_t>(l)], dx);
      Tensor db = bias_grad(dx);
      grads_rev.emplace_back("b" + std::to_string(l + 1), std::move(db));
      grads_rev.emplace_back("w" + std::to_string(l + 1), std::move(dw));
      if (l > 0 || spec.has_embedding()) dx = matmul_nt(dx, *w);
    }
    ParamSet frag;
    if (s == 0 && spec.has_embedding()) {
      Tensor dtable = Tensor::zeros({spec.vocab_size, spec.emb_dim});
      embed_backward(batch.inputs, dx, spec.seq_len, spec.emb_dim, dtable);
      frag.add("embed", std::move(dtable));
    }
    for (auto it = grads_rev.rbegin(); it != grads_rev.rend(); ++it)
      frag.add(std::move(it->first), std::move(it->second));
    out.stage_grads[static_cast<size_t>(s)] = std::move(frag);
  }
  return out;
}

ForwardBackwardResult forward_backward(const ModelSpec& spec, const ParamSet& params,
                                       const Batch& batch) {
  StagePlan plan = partition_stages(spec, 1);
  PipelineResult pr = pipeline_forward_backward(spec, params, plan, batch);
  ForwardBackwardResult out;
  out.loss = pr.loss;
  if (pr.stage_grads.size() == 1 && pr.stage_grads[0].same_layout(params))
    out.grads = std::move(pr.stage_grads[0]);
  else
    out.grads = merge_stage_grads(params, pr.stage_grads);
  return out;
}

double forward_loss(const ModelSpec& spec, const ParamSet& params, const Batch& batch) {
  spec.validate();
  const auto dims = spec.dense_dims();
  const int layers = spec.dense_layers();
  const bool ce = (spec.kind == ModelKind::CharLm) || (spec.classes > 0);

  Tensor x;
  if (spec.has_embedding()) {
    const Tensor* table = params.find("embed");
    if (table == nullptr) throw ValidationError("missing embedding table");
    x = embed_forward(batch.inputs, *table, spec.seq_len, spec.emb_dim);
  } else {
    if (batch.inputs.cols() != dims[0]) throw ShapeError("batch width does not match the model input");
    x = batch.inputs;
  }
  for (int l = 0; l < layers; ++l) {
    const Tensor* w = params.find("w" + std::to_string(l + 1));
    const Tensor* b = params.find("b" + std::to_string(l + 1));
    if (w == nullptr || b == nullptr) throw ValidationError("missing dense layer parameters");
    Tensor z = matmul(x, *w);
    add_bias(z, *b);
    if (l + 1 < layers) {
      Tensor a;
      apply_activation(z, a, spec.activation);
      x = std::move(a);
    } else {
      x = std::move(z);
    }
  }
  LossHead head = ce ? cross_entropy_head(x, head_targets(spec, batch)) : mse_head(x, batch.targets);
  if (!std::isfinite(head.loss)) throw NumericError("non-finite loss in forward pass");
  return head.loss;
}

ParamSet merge_stage_grads(const ParamSet& like, const std::vector<ParamSet>& fragments) {
  ParamSet merged;
  for (const ParamSet& frag : fragments)
    for (int i = 0; i < frag.count(); ++i) merged.add(frag.name(i), frag.tensor(i));
  // Reorder to the reference layout.
  ParamSet out;
  for (int i = 0; i < like.count(); ++i) {
    const Tensor* t = merged.find(like.name(i));
    if (t == nullptr) throw ValidationError("stage gradients missing tensor: " + like.name(i));
    out.add(like.name(i), *t);
  }
  return out;
}

void save_checkpoint(const std::string& path, const ParamSet& params) {
  std::vector<uint8_t> buf;
  buf.reserve(static_cast<size_t>(params.total_params()) * 4 + 256);
  wire::put_u32(buf, 0x50584c44u);  // "DLXP"
  wire::put_u32(buf, 1u);
  wire::put_u32(buf, static_cast<uint32_t>(params.count()));
  for (int i = 0; i < params.count(); ++i) {
    wire::put_string(buf, params.name(i));
    const Tensor& t = params.tensor(i);
    wire::put_u8(buf, static_cast<uint8_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) wire::put_u64(buf, static_cast<uint64_t>(t.dim(d)));
    for (int64_t k = 0; k < t.size(); ++k) wire::put_f32(buf, t[k]);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("error writing checkpoint: " + path);
}

ParamSet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  wire::Reader r(buf.data(), buf.size());
  if (r.u32() != 0x50584c44u) throw FormatError("bad checkpoint magic");
  if (r.u32() != 1u) throw FormatError("unsupported checkpoint version");
  const uint32_t count = r.u32();
  ParamSet params;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.string();
    const int ndim = r.u8();
    std::vector<int64_t> shape;
    int64_t n = 1;
    for (int d = 0; d < ndim; ++d) {
      shape.push_back(static_cast<int64_t>(r.u64()));
      n *= shape.back();
    }
    Tensor t(shape);
    for (int64_t k = 0; k < n; ++k) t[k] = r.f32();
    params.add(name, std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes in checkpoint");
  return params;
}

}  // namespace dilocox
