#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "dilocox/data.hpp"
#include "test_support.hpp"

using namespace dilocox;

TEST_SUITE_BEGIN("data");

TEST_CASE("load_corpus builds the sorted-byte vocabulary") {
  const auto dir = testsup::temp_dir("data");
  const std::string path = testsup::write_text(dir / "abab.txt", "abab");

  Dataset ds = load_corpus(path, 4);
  CHECK(ds.vocab_size == 2);
  REQUIRE(ds.tokens.size() == 4);
  CHECK(ds.tokens == std::vector<int32_t>{0, 1, 0, 1});
  CHECK(ds.vocab_bytes == std::vector<uint8_t>{'a', 'b'});
}

TEST_CASE("load_corpus truncates to max_bytes") {
  const auto dir = testsup::temp_dir("data");
  const std::string path = testsup::write_text(dir / "abab2.txt", "abab");
  Dataset ds = load_corpus(path, 2);
  CHECK(ds.tokens == std::vector<int32_t>{0, 1});
}

TEST_CASE("load_corpus byte-count oracle on a 1 MiB corpus") {
  const auto dir = testsup::temp_dir("data");
  const int64_t n = 1 << 20;
  const std::vector<uint8_t> bytes = demo_corpus_bytes(n, 3);
  std::set<uint8_t> distinct(bytes.begin(), bytes.end());
  {
    std::ofstream out(dir / "big.txt", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  Dataset ds = load_corpus((dir / "big.txt").string(), n);
  CHECK(static_cast<int64_t>(ds.tokens.size()) == n);
  CHECK(ds.vocab_size == static_cast<int>(distinct.size()));
}

TEST_CASE("load_corpus error paths") {
  const auto dir = testsup::temp_dir("data");
  CHECK_THROWS_AS(load_corpus((dir / "missing.txt").string(), 10), IoError);
  const std::string empty = testsup::write_text(dir / "empty.txt", "");
  CHECK_THROWS_AS(load_corpus(empty, 10), ValidationError);
}

TEST_CASE("shard identity for D=1") {
  Dataset ds = corpus_from_bytes(demo_corpus_bytes(100, 1));
  Dataset s = shard(ds, 1, 0);
  CHECK(s.tokens == ds.tokens);
}

TEST_CASE("shard splits 10 tokens into two disjoint halves") {
  Dataset ds;
  ds.kind = DataKind::CharCorpus;
  ds.vocab_size = 10;
  for (int i = 0; i < 10; ++i) ds.tokens.push_back(i);
  Dataset a = shard(ds, 2, 0);
  Dataset b = shard(ds, 2, 1);
  CHECK(a.tokens == std::vector<int32_t>{0, 1, 2, 3, 4});
  CHECK(b.tokens == std::vector<int32_t>{5, 6, 7, 8, 9});
}

TEST_CASE("shard concatenation reproduces a prefix of the dataset") {
  Dataset ds = corpus_from_bytes(demo_corpus_bytes(997, 5));
  for (int d : {2, 3, 4, 7}) {
    std::vector<int32_t> cat;
    for (int i = 0; i < d; ++i) {
      Dataset s = shard(ds, d, i);
      cat.insert(cat.end(), s.tokens.begin(), s.tokens.end());
    }
    CHECK(static_cast<int64_t>(cat.size()) >= ds.length() - (d - 1));
    for (size_t i = 0; i < cat.size(); ++i) CHECK(cat[i] == ds.tokens[i]);
  }
}

TEST_CASE("shard validates its index") {
  Dataset ds = corpus_from_bytes(demo_corpus_bytes(100, 1));
  CHECK_THROWS_AS(shard(ds, 2, 2), ValidationError);
  CHECK_THROWS_AS(shard(ds, 2, -1), ValidationError);
}

TEST_CASE("next_batch is deterministic in (dataset, seed)") {
  Dataset ds = corpus_from_bytes(demo_corpus_bytes(2048, 2));
  RngStream r1(9, 1), r2(9, 1);
  Batch a = next_batch(ds, r1, 4, 8);
  Batch b = next_batch(ds, r2, 4, 8);
  CHECK(a.inputs.values() == b.inputs.values());
  CHECK(a.targets.values() == b.targets.values());
  CHECK(a.token_count == 32);
}

TEST_CASE("window extraction shifts targets by one") {
  Dataset ds = corpus_from_bytes({'a', 'b', 'c', 'd'});
  Tensor inputs({1, 2}), targets({1, 2});
  fill_window(ds, 0, 2, 0, inputs, targets);
  // "ab" -> "bc" under the sorted vocab a=0 b=1 c=2 d=3
  CHECK(inputs.at(0, 0) == 0.0f);
  CHECK(inputs.at(0, 1) == 1.0f);
  CHECK(targets.at(0, 0) == 1.0f);
  CHECK(targets.at(0, 1) == 2.0f);
}

TEST_CASE("next_batch windows always satisfy the shift-by-one relation") {
  Dataset ds = corpus_from_bytes(demo_corpus_bytes(512, 4));
  RngStream rng(1, 2);
  for (int trial = 0; trial < 50; ++trial) {
    Batch b = next_batch(ds, rng, 3, 5);
    for (int64_t row = 0; row < 3; ++row)
      for (int64_t j = 0; j + 1 < 5; ++j)
        CHECK(b.targets.at(row, j) == b.inputs.at(row, j + 1));
  }
}

TEST_CASE("next_batch validates seq_len against the dataset") {
  Dataset ds = corpus_from_bytes({'a', 'b', 'c'});
  RngStream rng(0, 0);
  CHECK_THROWS_AS(next_batch(ds, rng, 1, 3), ValidationError);
  CHECK_THROWS_AS(next_batch(ds, rng, 1, 7), ValidationError);
}

TEST_CASE("sampled token frequency tracks corpus frequency within 3 sigma") {
  // Small skewed corpus; draw 10k windows of one token each.
  std::vector<uint8_t> bytes;
  for (int i = 0; i < 60; ++i) bytes.push_back('a');
  for (int i = 0; i < 30; ++i) bytes.push_back('b');
  for (int i = 0; i < 10; ++i) bytes.push_back('c');
  Dataset ds = corpus_from_bytes(bytes);
  RngStream rng(17, 0);
  const int draws = 10000;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < draws; ++i) {
    Batch b = next_batch(ds, rng, 1, 1);
    counts[static_cast<size_t>(b.inputs.at(0, 0))]++;
  }
  // Offsets are uniform over the first n - seq_len positions.
  const int span = 99;
  const double p[3] = {60.0 / span, 30.0 / span, 9.0 / span};
  for (int t = 0; t < 3; ++t) {
    const double mean = draws * p[t];
    const double sigma = std::sqrt(draws * p[t] * (1.0 - p[t]));
    CHECK(std::fabs(counts[static_cast<size_t>(t)] - mean) <= 3.0 * sigma);
  }
}

TEST_CASE("synthetic datasets are deterministic and learn-ready") {
  Dataset a = make_synthetic_regression(128, 8, 3, 6, 42);
  Dataset b = make_synthetic_regression(128, 8, 3, 6, 42);
  CHECK(a.features.values() == b.features.values());
  CHECK(a.targets.values() == b.targets.values());
  CHECK(a.features.rows() == 128);
  CHECK(a.targets.cols() == 3);

  Dataset c = make_synthetic_classification(64, 8, 5, 6, 1);
  for (int64_t i = 0; i < 64; ++i) {
    CHECK(c.targets.at(i, 0) >= 0.0f);
    CHECK(c.targets.at(i, 0) < 5.0f);
  }
}

TEST_CASE("split_train_eval holds out a disjoint tail") {
  Dataset ds = corpus_from_bytes(demo_corpus_bytes(1000, 9));
  auto [train, eval] = split_train_eval(ds, 0.1);
  CHECK(train.length() == 900);
  CHECK(eval.length() == 100);
  for (int64_t i = 0; i < train.length(); ++i)
    CHECK(train.tokens[static_cast<size_t>(i)] == ds.tokens[static_cast<size_t>(i)]);
  for (int64_t i = 0; i < eval.length(); ++i)
    CHECK(eval.tokens[static_cast<size_t>(i)] == ds.tokens[static_cast<size_t>(900 + i)]);
}

TEST_CASE("fixed_eval_batch is deterministic and rng-free") {
  Dataset ds = corpus_from_bytes(demo_corpus_bytes(300, 9));
  Batch a = fixed_eval_batch(ds, 8, 4);
  Batch b = fixed_eval_batch(ds, 8, 4);
  CHECK(a.inputs.values() == b.inputs.values());
  CHECK(a.inputs.rows() == 8);
}

TEST_SUITE_END();
