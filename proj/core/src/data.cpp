#include "dilocox/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

namespace dilocox {

DataKind data_kind_from_string(const std::string& s) {
  if (s == "char-corpus") return DataKind::CharCorpus;
  if (s == "synthetic-regression") return DataKind::SyntheticRegression;
  if (s == "synthetic-classification") return DataKind::SyntheticClassification;
  throw ValidationError("unknown data kind: " + s);
}

std::string to_string(DataKind k) {
  switch (k) {
    case DataKind::CharCorpus: return "char-corpus";
    case DataKind::SyntheticRegression: return "synthetic-regression";
    case DataKind::SyntheticClassification: return "synthetic-classification";
  }
  return "?";
}

Dataset corpus_from_bytes(const std::vector<uint8_t>& bytes) {
  if (bytes.empty()) throw ValidationError("corpus is empty");
  std::array<bool, 256> seen{};
  for (uint8_t b : bytes) seen[b] = true;

  Dataset ds;
  ds.kind = DataKind::CharCorpus;
  std::array<int32_t, 256> id{};
  id.fill(-1);
  for (int b = 0; b < 256; ++b) {
    if (seen[static_cast<size_t>(b)]) {
      id[static_cast<size_t>(b)] = static_cast<int32_t>(ds.vocab_bytes.size());
      ds.vocab_bytes.push_back(static_cast<uint8_t>(b));
    }
  }
  ds.vocab_size = static_cast<int>(ds.vocab_bytes.size());
  ds.tokens.reserve(bytes.size());
  for (uint8_t b : bytes) ds.tokens.push_back(id[b]);
  return ds;
}

Dataset load_corpus(const std::string& path, int64_t max_bytes) {
  if (max_bytes <= 0) throw ValidationError("max_bytes must be positive");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file: " + path);
  std::vector<uint8_t> bytes;
  bytes.reserve(4096);
  char c;
  while (static_cast<int64_t>(bytes.size()) < max_bytes && in.get(c))
    bytes.push_back(static_cast<uint8_t>(c));
  if (in.bad()) throw IoError("error reading corpus file: " + path);
  if (bytes.empty()) throw ValidationError("corpus file is empty: " + path);
  return corpus_from_bytes(bytes);
}

namespace {

// Small fixed tanh teacher net evaluated in double.
Tensor teacher_forward(const Tensor& x, const Tensor& w1, const Tensor& w2) {
  Tensor h = matmul(x, w1);
  for (float& v : h.values()) v = std::tanh(v);
  return matmul(h, w2);
}

Dataset make_synthetic(int64_t samples, int in_dim, int out_dim, int teacher_hidden, uint64_t seed,
                       bool classify) {
  if (samples <= 0 || in_dim <= 0 || out_dim <= 0 || teacher_hidden <= 0)
    throw ValidationError("synthetic dataset dimensions must be positive");
  RngStream rng(seed, stream_key({0x7ea, static_cast<uint64_t>(in_dim), static_cast<uint64_t>(out_dim)}));
  Tensor w1 = Tensor::uniform({in_dim, teacher_hidden}, -1.0f, 1.0f, rng);
  Tensor w2 = Tensor::uniform({teacher_hidden, out_dim}, -1.0f, 1.0f, rng);

  Dataset ds;
  ds.kind = classify ? DataKind::SyntheticClassification : DataKind::SyntheticRegression;
  ds.features = Tensor::uniform({samples, in_dim}, -1.0f, 1.0f, rng);
  Tensor y = teacher_forward(ds.features, w1, w2);
  if (!classify) {
    ds.targets = std::move(y);
  } else {
    ds.targets = Tensor({samples, 1});
    for (int64_t i = 0; i < samples; ++i) {
      int64_t best = 0;
      for (int64_t j = 1; j < out_dim; ++j)
        if (y.at(i, j) > y.at(i, best)) best = j;
      ds.targets.at(i, 0) = static_cast<float>(best);
    }
  }
  return ds;
}

}  // namespace

Dataset make_synthetic_regression(int64_t samples, int in_dim, int out_dim, int teacher_hidden,
                                  uint64_t seed) {
  return make_synthetic(samples, in_dim, out_dim, teacher_hidden, seed, false);
}

Dataset make_synthetic_classification(int64_t samples, int in_dim, int classes, int teacher_hidden,
                                      uint64_t seed) {
  return make_synthetic(samples, in_dim, classes, teacher_hidden, seed, true);
}

namespace {

Dataset slice(const Dataset& ds, int64_t begin, int64_t count) {
  Dataset out;
  out.kind = ds.kind;
  out.vocab_bytes = ds.vocab_bytes;
  out.vocab_size = ds.vocab_size;
  if (ds.kind == DataKind::CharCorpus) {
    out.tokens.assign(ds.tokens.begin() + begin, ds.tokens.begin() + begin + count);
  } else {
    const int64_t in_dim = ds.features.cols();
    const int64_t out_dim = ds.targets.cols();
    out.features = Tensor({count, in_dim});
    out.targets = Tensor({count, out_dim});
    std::copy_n(ds.features.data() + begin * in_dim, count * in_dim, out.features.data());
    std::copy_n(ds.targets.data() + begin * out_dim, count * out_dim, out.targets.data());
  }
  return out;
}

}  // namespace

Dataset shard(const Dataset& ds, int d, int i) {
  if (d < 1) throw ValidationError("shard count must be >= 1");
  if (i < 0 || i >= d) throw ValidationError("shard index out of range");
  const int64_t n = ds.length();
  if (n < d) throw ValidationError("dataset shorter than shard count");
  const int64_t per = n / d;
  return slice(ds, static_cast<int64_t>(i) * per, per);
}

std::pair<Dataset, Dataset> split_train_eval(const Dataset& ds, double eval_fraction) {
  if (eval_fraction < 0.0 || eval_fraction >= 1.0)
    throw ValidationError("eval_fraction must be in [0, 1)");
  const int64_t n = ds.length();
  int64_t eval_n = static_cast<int64_t>(static_cast<double>(n) * eval_fraction);
  if (eval_fraction > 0.0) eval_n = std::max<int64_t>(eval_n, 1);
  const int64_t train_n = n - eval_n;
  if (train_n < 1) throw ValidationError("eval split leaves no training data");
  Dataset train = slice(ds, 0, train_n);
  Dataset eval = eval_n > 0 ? slice(ds, train_n, eval_n) : Dataset{};
  eval.kind = ds.kind;
  return {std::move(train), std::move(eval)};
}

void fill_window(const Dataset& ds, int64_t offset, int seq_len, int64_t row, Tensor& inputs,
                 Tensor& targets) {
  for (int j = 0; j < seq_len; ++j) {
    inputs.at(row, j) = static_cast<float>(ds.tokens[static_cast<size_t>(offset + j)]);
    targets.at(row, j) = static_cast<float>(ds.tokens[static_cast<size_t>(offset + j + 1)]);
  }
}

Batch next_batch(const Dataset& ds, RngStream& rng, int batch, int seq_len) {
  if (batch < 1) throw ValidationError("batch must be >= 1");
  Batch b;
  if (ds.kind == DataKind::CharCorpus) {
    const int64_t n = ds.length();
    if (seq_len < 1) throw ValidationError("seq_len must be >= 1");
    if (seq_len >= n) throw ValidationError("seq_len must be smaller than the dataset");
    b.inputs = Tensor({batch, seq_len});
    b.targets = Tensor({batch, seq_len});
    const uint64_t span = static_cast<uint64_t>(n - seq_len);
    for (int i = 0; i < batch; ++i) {
      const int64_t offset = static_cast<int64_t>(rng.below(span));
      fill_window(ds, offset, seq_len, i, b.inputs, b.targets);
    }
    b.token_count = static_cast<int64_t>(batch) * seq_len;
  } else {
    const int64_t n = ds.length();
    const int64_t in_dim = ds.features.cols();
    const int64_t out_dim = ds.targets.cols();
    b.inputs = Tensor({batch, in_dim});
    b.targets = Tensor({batch, out_dim});
    for (int i = 0; i < batch; ++i) {
      const int64_t rowi = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));
      std::copy_n(ds.features.data() + rowi * in_dim, in_dim, b.inputs.data() + i * in_dim);
      std::copy_n(ds.targets.data() + rowi * out_dim, out_dim, b.targets.data() + i * out_dim);
    }
    b.token_count = batch;
  }
  return b;
}

Batch fixed_eval_batch(const Dataset& ds, int windows, int seq_len) {
  if (windows < 1) throw ValidationError("eval windows must be >= 1");
  Batch b;
  if (ds.kind == DataKind::CharCorpus) {
    const int64_t n = ds.length();
    if (seq_len >= n) throw ValidationError("seq_len must be smaller than the dataset");
    const int64_t span = n - seq_len;
    const int count = static_cast<int>(std::min<int64_t>(windows, span));
    b.inputs = Tensor({count, seq_len});
    b.targets = Tensor({count, seq_len});
    for (int i = 0; i < count; ++i) {
      const int64_t offset = (span * i) / count;
      fill_window(ds, offset, seq_len, i, b.inputs, b.targets);
    }
    b.token_count = static_cast<int64_t>(count) * seq_len;
  } else {
    const int count = static_cast<int>(std::min<int64_t>(windows, ds.length()));
    const int64_t in_dim = ds.features.cols();
    const int64_t out_dim = ds.targets.cols();
    b.inputs = Tensor({count, in_dim});
    b.targets = Tensor({count, out_dim});
    std::copy_n(ds.features.data(), count * in_dim, b.inputs.data());
    std::copy_n(ds.targets.data(), count * out_dim, b.targets.data());
    b.token_count = count;
  }
  return b;
}

namespace {

const char* kWords[] = {
    "the",      "quick",   "brown",   "fox",     "jumps",   "over",     "lazy",    "dog",
    "stone",    "river",   "cloud",   "light",   "shadow",  "forest",   "wind",    "grass",
    "stars",    "silver",  "moon",    "sun",     "bird",    "sings",    "early",   "autumn",
    "rain",     "falls",   "soft",    "warm",    "cold",    "night",    "day",     "long",
    "road",     "leads",   "home",    "again",   "small",   "boat",     "sails",   "slow",
    "mountain", "valley",  "whisper", "echo",    "bright",  "deep",     "hollow",  "amber",
    "winter",   "summer",  "spring",  "harvest", "meadow",  "lantern",  "geese",   "thunder",
    "quiet",    "village", "harbor",  "candle",  "copper",  "garden",   "orchard", "bridge",
    "stream",   "pebble",  "branch",  "needle",  "weather", "distant",  "golden",  "crimson",
    "velvet",   "marble",  "timber",  "ember",   "frost",   "mist",     "dawn",    "dusk",
    "travel",   "wander",  "gather",  "scatter", "settle",  "tremble",  "shimmer", "glisten",
    "murmur",   "rustle",  "drift",   "linger",  "vanish",  "appear",   "follow",  "return",
    "beneath",  "beyond",  "between", "through", "against", "toward",   "within",  "without",
    "ancient",  "gentle",  "narrow",  "steady",  "curious", "restless", "patient", "silent"};

// Markov-ish sentence templates keep medium-range structure in the stream.
const char* kConnectors[] = {" and ", " but ", " while ", " as ", " when ", ", then "};

}  // namespace

std::vector<uint8_t> demo_corpus_bytes(int64_t target_bytes, uint64_t seed) {
  return demo_corpus_bytes(target_bytes, seed, 0.0);
}

std::vector<uint8_t> demo_corpus_bytes(int64_t target_bytes, uint64_t seed, double drift) {
  if (target_bytes <= 0) throw ValidationError("target_bytes must be positive");
  if (drift < 0.0 || drift > 1.0) throw ValidationError("drift must be in [0, 1]");
  RngStream rng(seed, 0xc0c0a);
  const size_t nwords = sizeof(kWords) / sizeof(kWords[0]);
  const size_t nconn = sizeof(kConnectors) / sizeof(kConnectors[0]);
  std::vector<uint8_t> out;
  out.reserve(static_cast<size_t>(target_bytes) + 32);
  auto push = [&out](const char* s) {
    for (const char* p = s; *p; ++p) out.push_back(static_cast<uint8_t>(*p));
  };
  // With drift > 0 the word distribution slides along the list as the text
  // advances, so contiguous shards see genuinely different statistics.
  auto pick_word = [&](double progress) -> const char* {
    if (drift <= 0.0) return kWords[rng.below(nwords)];
    const double span = 1.0 - drift;
    const double lo = progress * drift;
    const size_t window = std::max<size_t>(8, static_cast<size_t>(span * nwords));
    const size_t base = static_cast<size_t>(lo * nwords);
    return kWords[std::min(nwords - 1, base + rng.below(window))];
  };
  while (static_cast<int64_t>(out.size()) < target_bytes) {
    const double progress = static_cast<double>(out.size()) / static_cast<double>(target_bytes);
    const int clauses = 1 + static_cast<int>(rng.below(3));
    for (int cl = 0; cl < clauses; ++cl) {
      const int words = 3 + static_cast<int>(rng.below(6));
      for (int w = 0; w < words; ++w) {
        push(pick_word(progress));
        if (w + 1 < words) out.push_back(' ');
      }
      if (cl + 1 < clauses) push(kConnectors[rng.below(nconn)]);
    }
    push(".\n");
  }
  out.resize(static_cast<size_t>(target_bytes));
  return out;
}

void write_demo_corpus(const std::string& path, int64_t target_bytes, uint64_t seed) {
  const std::vector<uint8_t> bytes = demo_corpus_bytes(target_bytes, seed);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing corpus file: " + path);
}

}  // namespace dilocox
