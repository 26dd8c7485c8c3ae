#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "structssl/data.hpp"
#include "structssl/evaluation.hpp"
#include "structssl/models.hpp"
#include "structssl/rng.hpp"

using namespace structssl;
using namespace structssl::evaluation;

namespace {

struct Blobs {
  FeatureMatrix features;
  std::vector<int> labels;
};

// Gaussian blobs centred at +-(2, 2) with unit noise.
Blobs two_blobs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Blobs b;
  b.features = {n, 2, {}};
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    const double c = y ? 2.0 : -2.0;
    b.features.values.push_back(c + 0.7 * rng.normal());
    b.features.values.push_back(c + 0.7 * rng.normal());
    b.labels.push_back(y);
  }
  return b;
}

data::Dataset small_shapes(std::size_t n, std::uint64_t seed) {
  data::ShapesSpec spec;
  spec.image_size = 16;
  spec.size_min = 4;
  spec.size_max = 6;
  spec.seed = seed;
  return data::synth_shapes(spec, n);
}

models::ModelConfig small_model() {
  models::ModelConfig c;
  c.height = c.width = 16;
  c.S = 2;
  c.D = 3;
  c.conv_widths = {4, 4};
  c.hidden = 4;
  return c;
}

double checksum(const models::Model& m) {
  double s = 0.0, k = 1.0;
  for (const auto& [name, t] : m.named_parameters())
    for (double v : t.values()) s += (k += 1e-3) * v;
  return s;
}

}  // namespace

TEST_CASE("feature extraction") {
  const auto ds = small_shapes(10, 1);
  const auto model = models::Model::init(small_model(), 2);
  const auto f = extract_features(model, ds);
  CHECK(f.rows == 10);
  CHECK(f.cols == 6);
  CHECK(f.values.size() == 60);

  const auto chunked = extract_features(model, ds, 3);
  for (std::size_t i = 0; i < f.values.size(); ++i) CHECK(chunked.values[i] == doctest::Approx(f.values[i]).epsilon(1e-12));

  const auto row3 = models::encode(ds.image(3), model);
  for (std::size_t d = 0; d < 6; ++d) CHECK(f.values[3 * 6 + d] == doctest::Approx(row3.values()[d]).epsilon(1e-12));

  const auto dup = ds.subset({4, 4, 7});
  const auto fd = extract_features(model, dup);
  for (std::size_t d = 0; d < 6; ++d) CHECK(fd.values[d] == fd.values[6 + d]);

  const auto zero = extract_features(models::Model::zeros(small_model()), ds);
  for (double v : zero.values) CHECK(v == 0.0);

  auto wrong = small_model();
  wrong.height = wrong.width = 32;
  CHECK_THROWS_AS(extract_features(models::Model::init(wrong, 3), ds), ShapeError);
}

TEST_CASE("score bookkeeping") {
  const auto r = score({0, 0, 1, 2, 2, 2}, {0, 1, 1, 2, 2, 0}, 3);
  CHECK(r.class_counts == std::vector<std::size_t>{2, 2, 2});
  CHECK(r.per_class_accuracy[0] == doctest::Approx(0.5));
  CHECK(r.per_class_accuracy[1] == doctest::Approx(0.5));
  CHECK(r.per_class_accuracy[2] == doctest::Approx(1.0));
  double weighted = 0.0;
  for (std::size_t k = 0; k < 3; ++k) weighted += r.per_class_accuracy[k] * r.class_counts[k] / 6.0;
  CHECK(r.accuracy == doctest::Approx(weighted));
  CHECK(r.accuracy == doctest::Approx(4.0 / 6.0));
}

TEST_CASE("linear probe") {
  SUBCASE("separable blobs") {
    const auto train = two_blobs(400, 4), test = two_blobs(400, 5);
    ProbeConfig pc;
    const auto r = linear_probe(train.features, train.labels, test.features, test.labels, 2, pc);
    CHECK(r.accuracy > 0.98);
    CHECK(r.epochs == 100);
    CHECK(r.feature_dim == 2);
  }
  SUBCASE("constant features sit at chance") {
    FeatureMatrix f{400, 3, std::vector<double>(1200, 0.7)};
    std::vector<int> labels(400);
    for (std::size_t i = 0; i < 400; ++i) labels[i] = static_cast<int>(i % 4);
    ProbeConfig pc;
    pc.epochs = 20;
    const auto r = linear_probe(f, labels, f, labels, 4, pc);
    CHECK(std::abs(r.accuracy - 0.25) <= 0.05);
  }
  SUBCASE("zero encoder features sit at chance") {
    const auto ds = small_shapes(240, 6);
    const auto f = extract_features(models::Model::zeros(small_model()), ds);
    ProbeConfig pc;
    pc.epochs = 10;
    const auto r = linear_probe(f, ds.labels, ds.num_classes, pc);
    CHECK(r.accuracy < 0.35);
  }
  SUBCASE("training accuracy beats chance minus 2%") {
    const auto ds = small_shapes(300, 7);
    const auto f = extract_features(models::Model::init(small_model(), 8), ds);
    ProbeConfig pc;
    LinearProbe probe(f.cols, ds.num_classes, pc);
    Rng rng(9);
    double acc = 0.0;
    for (int e = 0; e < 20; ++e) acc = probe.train_epoch(f, ds.labels, rng);
    std::vector<std::size_t> counts(ds.num_classes, 0);
    for (int y : ds.labels) ++counts[y];
    const double majority = *std::max_element(counts.begin(), counts.end()) / 300.0;
    CHECK(acc >= 1.0 / ds.num_classes - 0.02);
    CHECK(acc >= majority - 0.02);
  }
  SUBCASE("reproducible") {
    const auto train = two_blobs(100, 10), test = two_blobs(100, 11);
    ProbeConfig pc;
    pc.epochs = 5;
    pc.seed = 3;
    const auto a = linear_probe(train.features, train.labels, test.features, test.labels, 2, pc);
    const auto b = linear_probe(train.features, train.labels, test.features, test.labels, 2, pc);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.per_class_accuracy == b.per_class_accuracy);
  }
  SUBCASE("80/20 split") {
    const auto all = two_blobs(500, 12);
    ProbeConfig pc;
    const auto r = linear_probe(all.features, all.labels, 2, pc);
    std::size_t held_out = 0;
    for (auto c : r.class_counts) held_out += c;
    CHECK(held_out == 100);
    CHECK(r.accuracy > 0.98);
  }
  SUBCASE("rejections") {
    const auto b = two_blobs(20, 13);
    ProbeConfig pc;
    std::vector<int> one_class(20, 1);
    CHECK_THROWS(linear_probe(b.features, one_class, b.features, one_class, 2, pc));
    std::vector<int> out_of_range = b.labels;
    out_of_range[0] = 5;
    CHECK_THROWS(linear_probe(b.features, out_of_range, b.features, b.labels, 2, pc));
    FeatureMatrix bad = b.features;
    bad.values[3] = std::nan("");
    CHECK_THROWS(linear_probe(bad, b.labels, b.features, b.labels, 2, pc));
    CHECK_THROWS(LinearProbe(0, 2, pc));
  }
}

TEST_CASE("periodic probe hook") {
  const auto probe_set = small_shapes(64, 14);
  const auto model = models::Model::init(small_model(), 15);
  const double before = checksum(model);
  const auto snapshot = model.clone();

  PeriodicProbe hook(probe_set, 3, 16);
  CHECK(hook.enabled());
  std::vector<std::size_t> logged;
  for (std::size_t it = 1; it <= 10; ++it) {
    const auto acc = hook.maybe_probe(it, model);
    if (acc) {
      logged.push_back(it);
      CHECK(*acc >= 0.0);
      CHECK(*acc <= 1.0);
    }
  }
  CHECK(logged == std::vector<std::size_t>{3, 6, 9});
  CHECK(checksum(model) == before);
  const auto a = model.named_parameters(), b = snapshot.named_parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto va = a[i].second.values(), vb = b[i].second.values();
    CHECK(std::equal(va.begin(), va.end(), vb.begin(), vb.end()));
  }

  PeriodicProbe never(probe_set, 0, 16);
  CHECK_FALSE(never.enabled());
  for (std::size_t it = 1; it <= 300; ++it) CHECK_FALSE(never.maybe_probe(it, model).has_value());

  const data::Dataset empty;
  PeriodicProbe no_data(empty, 5, 16);
  CHECK_FALSE(no_data.maybe_probe(5, model).has_value());
}

TEST_CASE("csv and summary") {
  ProbeResult r;
  r.accuracy = 0.5;
  r.per_class_accuracy = {0.25, 0.75};
  r.class_counts = {4, 4};
  r.epochs = 100;
  r.feature_dim = 64;
  r.checkpoint_id = "ckpt";
  const auto header = probe_csv_header(), row = probe_csv_row(r);
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
  CHECK(row.find("ckpt") != std::string::npos);
  CHECK(probe_summary(r).find("50") != std::string::npos);
}
