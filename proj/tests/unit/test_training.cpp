#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>

#include "helpers.hpp"
#include "structssl/data.hpp"
#include "structssl/models.hpp"
#include "structssl/ops.hpp"
#include "structssl/training.hpp"

using namespace structssl;
using namespace structssl::training;
using testutil::random_tensor;

namespace {

data::Dataset tiny_shapes(std::size_t n, std::uint64_t seed) {
  data::ShapesSpec spec;
  spec.image_size = 16;
  spec.size_min = 4;
  spec.size_max = 6;
  spec.seed = seed;
  return data::synth_shapes(spec, n);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.S = 2;
  c.D = 2;
  c.K = 2;
  c.conv_widths = {3, 4};
  c.hidden = 4;
  c.batch_size = 4;
  c.probe_interval = 0;
  c.record_wallclock = false;
  return c;
}

std::vector<AugmentDraw> draws_for(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<AugmentDraw> d;
  for (std::size_t i = 0; i < n; ++i) d.push_back(sample_augment(rng));
  return d;
}

double smoothed(const std::vector<MetricRow>& rows, std::size_t at, std::size_t window) {
  const std::size_t lo = at + 1 >= window ? at + 1 - window : 0;
  double s = 0.0;
  for (std::size_t i = lo; i <= at; ++i) s += rows[i].bound;
  return s / static_cast<double>(at + 1 - lo);
}

bool same_parameters(const models::Model& a, const models::Model& b) {
  const auto pa = a.named_parameters(), pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto va = pa[i].second.values(), vb = pb[i].second.values();
    if (pa[i].first != pb[i].first || !std::equal(va.begin(), va.end(), vb.begin(), vb.end())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("empty text gives defaults") {
    const auto c = parse_config_text("");
    CHECK(c.epochs == 50);
    CHECK(c.batch_size == 64);
    CHECK(c.augmentations == 32);
    CHECK(c.learning_rate == doctest::Approx(1e-3));
    CHECK(c.S == 8);
    CHECK(c.D == 8);
    CHECK(c.K == 2);
    CHECK(c.variant == Variant::ZA);
    CHECK(c.probe_interval == 100);
    CHECK(c.dataset == "synth");
  }
  SUBCASE("values, comments and whitespace") {
    const auto c = parse_config_text(
        "# run\n"
        "epochs = 3\n"
        "  variant=Z   # inline\n"
        "conv_widths = 8, 16,32 ,64\n"
        "probe_interval = inf\n"
        "learning_rate=5e-4\n"
        "seed=42\n");
    CHECK(c.epochs == 3);
    CHECK(c.variant == Variant::Z);
    CHECK(c.conv_widths == std::vector<std::size_t>{8, 16, 32, 64});
    CHECK(c.probe_interval == 0);
    CHECK(c.learning_rate == doctest::Approx(5e-4));
    CHECK(c.seed == 42);
  }
  SUBCASE("variants") {
    CHECK(parse_config_text("variant=ZA").variant == Variant::ZA);
    CHECK(parse_config_text("variant=A").variant == Variant::A);
    CHECK_THROWS_AS(parse_config_text("variant=B"), ConfigError);
    CHECK(parse_variant(to_string(Variant::A)) == Variant::A);
  }
  SUBCASE("errors name the line") {
    try {
      parse_config_text("epochs=2\nbogus=1\n", "run.cfg");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("run.cfg:2") != std::string::npos);
      CHECK(msg.find("bogus") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config_text("epochs=-1"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("epochs=two"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("batch_size=1"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("learning_rate=0"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("S=1"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("epochs"), ConfigError);
    CHECK_THROWS_AS(parse_config("/nonexistent/dir/run.cfg"), std::runtime_error);
  }
  SUBCASE("file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "structssl_test_config.cfg";
    std::ofstream(path) << "iterations=7\nbatch_size=16\n";
    const auto c = parse_config(path.string());
    CHECK(c.iterations == 7);
    CHECK(c.batch_size == 16);
    std::filesystem::remove(path);
  }
}

TEST_CASE("augment") {
  Rng rng(1);
  const auto img = random_tensor({8, 10, 3}, rng, 0, 1);
  const auto v = img.values();

  const auto same = apply_augment(v, 8, 10, 3, AugmentDraw::identity());
  CHECK(std::equal(same.begin(), same.end(), v.begin(), v.end()));

  AugmentDraw flip;
  flip.flip = true;
  const auto f = apply_augment(v, 8, 10, 3, flip);
  CHECK(f[(2 * 10 + 0) * 3 + 1] == v[(2 * 10 + 9) * 3 + 1]);
  const auto ff = apply_augment(f, 8, 10, 3, flip);
  CHECK(std::equal(ff.begin(), ff.end(), v.begin(), v.end()));

  std::size_t differing = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng r1(mix_seed(2, trial, 0)), r2(mix_seed(2, trial, 1));
    const auto a = augment(v, 8, 10, 3, r1), b = augment(v, 8, 10, 3, r2);
    CHECK(a.size() == v.size());
    if (a != b) ++differing;
    for (double x : a) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
  }
  CHECK(differing == 100);

  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    const auto d = sample_augment(r);
    const double area = d.crop_side * d.crop_side;
    CHECK(area >= 0.6);
    CHECK(area <= 1.0);
    CHECK(d.crop_x + d.crop_side <= 1.0 + 1e-12);
    CHECK(d.crop_y + d.crop_side <= 1.0 + 1e-12);
    for (int ch = 0; ch < 3; ++ch) {
      CHECK(std::abs(d.brightness[ch]) <= 0.2);
      CHECK(std::abs(d.contrast[ch] - 1.0) <= 0.2);
    }
  }
}

TEST_CASE("derangement") {
  Rng rng(4);
  CHECK(derangement(2, rng) == std::vector<std::size_t>{1, 0});
  for (std::size_t n = 2; n <= 64; ++n) {
    const auto p = derangement(n, rng);
    std::set<std::size_t> seen(p.begin(), p.end());
    CHECK(seen.size() == n);
    for (std::size_t i = 0; i < n; ++i) CHECK(p[i] != i);
  }
  CHECK_THROWS_AS(derangement(1, rng), std::invalid_argument);
}

TEST_CASE("build pairs") {
  const auto ds = tiny_shapes(6, 5);
  const auto cfg = tiny_config();
  const auto model = models::Model::init(cfg.model_config(16, 16, 3), 6);

  const auto views = make_views(ds, {0, 1}, draws_for(2, 7));
  Rng rng(8);
  const auto pb = build_pairs(ds, views, model, 9, rng);
  CHECK(pb.negative == std::vector<std::size_t>{1, 0});
  CHECK(pb.z.shape() == Shape{2, 4});
  CHECK(pb.z_pos.shape() == Shape{2, 4});
  CHECK(pb.a_pos.shape() == Shape{2, 8});
  CHECK(pb.has_structure);
  const auto zp = pb.z_pos.values(), zn = pb.z_neg.values();
  for (std::size_t d = 0; d < 4; ++d) {
    CHECK(zn[d] == zp[4 + d]);
    CHECK(zn[4 + d] == zp[d]);
  }
  // Anchors are the raw images.
  const auto anchor = models::encode(ds.image(1), model);
  const auto z = pb.z.values();
  for (std::size_t d = 0; d < 4; ++d) CHECK(z[4 + d] == doctest::Approx(anchor.values()[d]).epsilon(1e-12));

  const auto single = make_views(ds, {3}, draws_for(1, 7));
  CHECK_THROWS(build_pairs(ds, single, model, 9, rng));

  const auto big = make_views(ds, {0, 1, 2, 3, 4, 5}, draws_for(6, 10));
  Rng r2(11);
  const auto pb6 = build_pairs(ds, big, model, 9, r2, false);
  CHECK_FALSE(pb6.has_structure);
  for (std::size_t i = 0; i < 6; ++i) CHECK(pb6.negative[i] != i);
}

TEST_CASE("objective closed forms") {
  SUBCASE("constant critics give zero loss") {
    const Tensor one = Tensor::full({5}, 1.0);
    const CriticScores s{one, one, one, one};
    for (auto v : {Variant::Z, Variant::A, Variant::ZA}) {
      const auto obj = nwj_objective(s, v);
      CHECK(std::abs(obj.loss.item()) < 1e-15);
    }
  }
  SUBCASE("zero structure scores cost exactly 1/e per structure pair") {
    Rng rng(12);
    const Tensor zeros = Tensor::zeros({6});
    const CriticScores s{random_tensor({6}, rng), random_tensor({6}, rng), zeros, zeros};
    const double z = nwj_objective(s, Variant::Z).loss.item();
    const double za = nwj_objective(s, Variant::ZA).loss.item();
    CHECK(std::abs((za - z) - 1.0 / std::numbers::e) < 1e-15);
  }
  SUBCASE("variant additivity on one pair batch") {
    const auto ds = tiny_shapes(8, 13);
    const auto cfg = tiny_config();
    const auto model = models::Model::init(cfg.model_config(16, 16, 3), 14);
    const auto views = make_views(ds, {0, 1, 2, 3, 4, 5, 6, 7}, draws_for(8, 15));
    Rng rng(16);
    const auto pb = build_pairs(ds, views, model, 17, rng);
    const double z = nwj_objective(pb, model, Variant::Z).bound;
    const double a = nwj_objective(pb, model, Variant::A).bound;
    const double za = nwj_objective(pb, model, Variant::ZA).bound;
    CHECK(std::abs(za - (z + a)) < 1e-12);
  }
  SUBCASE("bound formula and clamp counter") {
    const Tensor pos({2}, {1.0, 3.0}), neg({2}, {0.0, 50.0});
    std::size_t clamped = 0;
    const double b = nwj_bound(pos, neg, &clamped).item();
    CHECK(clamped == 1);
    CHECK(b == doctest::Approx(2.0 - (1.0 + std::exp(40.0)) / (2.0 * std::numbers::e)).epsilon(1e-14));
  }
  SUBCASE("missing structure scores") {
    const Tensor one = Tensor::full({3}, 1.0);
    const CriticScores s{one, one, {}, {}};
    CHECK_THROWS_AS(nwj_objective(s, Variant::ZA), std::invalid_argument);
    CHECK_NOTHROW(nwj_objective(s, Variant::Z));
  }
}

TEST_CASE("objective gradients") {
  const auto ds = tiny_shapes(4, 18);
  const auto cfg = tiny_config();
  const auto base = models::Model::init(cfg.model_config(16, 16, 3), 19);
  const auto views = make_views(ds, {0, 1, 2, 3}, draws_for(4, 20));
  Rng rng(21);

  struct Target {
    std::string name;
    std::function<Tensor&(models::Model&)> slot;
  };
  const std::vector<Target> targets{
      {"theta.head.weight", [](models::Model& m) -> Tensor& { return m.theta.head.weight; }},
      {"theta.conv0.weight", [](models::Model& m) -> Tensor& { return m.theta.conv_weight[0]; }},
      {"delta.f.hidden.weight", [](models::Model& m) -> Tensor& { return m.critic.f.hidden.weight; }},
      {"eta.edge2.out.weight", [](models::Model& m) -> Tensor& { return m.eta.edge2.out.weight; }},
      {"w.bilinear", [](models::Model& m) -> Tensor& { return m.critic.w; }},
  };
  for (auto variant : {Variant::Z, Variant::A, Variant::ZA}) {
    for (const auto& t : targets) {
      CAPTURE(to_string(variant));
      CAPTURE(t.name);
      models::Model probe = base;
      const Shape shape = t.slot(probe).shape();
      auto f = [&](const Tensor& point) {
        models::Model m = base;
        t.slot(m) = point;
        Rng pair_rng(22);
        const auto pb = build_pairs(ds, views, m, 23, pair_rng, variant != Variant::Z);
        return nwj_objective(pb, m, variant).loss;
      };
      // A 1e-6 step keeps the central difference from straddling relu kinks.
      for (int p = 0; p < 10; ++p) CHECK(grad_check(f, random_tensor(shape, rng, -0.5, 0.5), 1e-6) < 1e-4);
    }
  }
}

TEST_CASE("train loop") {
  const auto ds = tiny_shapes(16, 24);
  SUBCASE("zero epochs returns the initialization") {
    auto cfg = tiny_config();
    cfg.epochs = 0;
    const auto r = train(cfg, ds);
    CHECK(r.metrics.empty());
    CHECK(same_parameters(r.model, models::Model::init(cfg.model_config(16, 16, 3), mix_seed(cfg.seed, 1))));
  }
  SUBCASE("epochs set the iteration count") {
    auto cfg = tiny_config();
    cfg.epochs = 2;
    const auto r = train(cfg, ds);
    CHECK(r.metrics.size() == 8);
    CHECK(r.iterations == 8);
    for (std::size_t i = 0; i < r.metrics.size(); ++i) {
      CHECK(r.metrics[i].iteration == i);
      CHECK(r.metrics[i].loss == doctest::Approx(-r.metrics[i].bound));
      CHECK_FALSE(r.metrics[i].probe_acc.has_value());
    }
    CHECK_FALSE(same_parameters(r.model, models::Model::init(cfg.model_config(16, 16, 3), mix_seed(cfg.seed, 1))));
  }
  SUBCASE("seeded runs are bitwise reproducible, with or without prefetch") {
    auto cfg = tiny_config();
    cfg.iterations = 6;
    const auto a = train(cfg, ds), b = train(cfg, ds);
    cfg.prefetch = true;
    const auto c = train(cfg, ds);
    CHECK(same_parameters(a.model, b.model));
    CHECK(same_parameters(a.model, c.model));
    for (std::size_t i = 0; i < a.metrics.size(); ++i) CHECK(a.metrics[i].bound == c.metrics[i].bound);
    cfg.seed = 1;
    CHECK_FALSE(same_parameters(a.model, train(cfg, ds).model));
  }
  SUBCASE("periodic probe entries") {
    auto cfg = tiny_config();
    cfg.iterations = 6;
    cfg.probe_interval = 3;
    const auto r = train(cfg, ds, tiny_shapes(24, 25));
    for (const auto& row : r.metrics) CHECK(row.probe_acc.has_value() == ((row.iteration + 1) % 3 == 0));
  }
  SUBCASE("invalid inputs") {
    auto cfg = tiny_config();
    cfg.iterations = 2;
    CHECK_THROWS(train(cfg, tiny_shapes(1, 26)));
    CHECK_THROWS(train(cfg, data::Dataset{}));
    cfg.learning_rate = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(train(cfg, ds), TrainingError);
  }
  SUBCASE("metrics csv") {
    auto cfg = tiny_config();
    cfg.iterations = 3;
    cfg.probe_interval = 2;
    const auto r = train(cfg, ds, tiny_shapes(24, 25));
    const auto path = std::filesystem::temp_directory_path() / "structssl_test_metrics.csv";
    write_metrics_csv(path.string(), r.metrics);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "iteration,bound,loss,probe_acc,wallclock_s");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      CHECK(std::count(line.begin(), line.end(), ',') == 4);
    }
    CHECK(rows == 3);
    std::filesystem::remove(path);
  }
}

TEST_CASE("bound rises on the synthetic dataset") {
  data::ShapesSpec spec;
  spec.seed = 27;
  const auto ds = data::synth_shapes(spec, 6000);
  TrainConfig cfg;
  cfg.iterations = 500;
  cfg.conv_widths = {8, 16, 32, 64};
  cfg.probe_interval = 0;
  cfg.record_wallclock = false;
  const auto r = train(cfg, ds);
  REQUIRE(r.metrics.size() == 500);
  const double early = smoothed(r.metrics, 10, 50), late = smoothed(r.metrics, 499, 50);
  MESSAGE("smoothed bound: iteration 10 = " << early << ", iteration 500 = " << late);
  CHECK(late > early);
}
