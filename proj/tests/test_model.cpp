#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "fedscan/data.hpp"
#include "fedscan/gradcheck.hpp"
#include "fedscan/model.hpp"
#include "test_util.hpp"

using namespace fedscan;
using testutil::TRng;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.input_hw = 4;
  cfg.slices = 2;
  cfg.growth_rate = 2;
  cfg.block_layout = {1};
  cfg.gru_hidden = 3;
  return cfg;
}

Tensor rand_tensor(Shape shape, TRng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = rng.range(-1.0, 1.0);
  }
  return t;
}

// plain-loop conv, stride 1, written independently of the graph engine
Tensor loop_conv(const Tensor& in, const Tensor& ker, int pad) {
  const int ci = in.dim(0), h = in.dim(1), w = in.dim(2);
  const int co = ker.dim(0), kh = ker.dim(2), kw = ker.dim(3);
  const int oh = h + 2 * pad - kh + 1;
  const int ow = w + 2 * pad - kw + 1;
  Tensor out = Tensor::zeros({co, oh, ow});
  for (int oc = 0; oc < co; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int ic = 0; ic < ci; ++ic) {
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy - pad + ky;
              const int ix = ox - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
                continue;
              }
              acc += in[static_cast<std::size_t>((ic * h + iy) * w + ix)] *
                     ker[static_cast<std::size_t>(
                         ((oc * ci + ic) * kh + ky) * kw + kx)];
            }
          }
        }
        out[static_cast<std::size_t>((oc * oh + oy) * ow + ox)] = acc;
      }
    }
  }
  return out;
}

Tensor loop_relu(Tensor t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = t[i] > 0.0 ? t[i] : 0.0;
  }
  return t;
}

Tensor loop_concat(const std::vector<Tensor>& parts) {
  int c = 0;
  for (const Tensor& p : parts) {
    c += p.dim(0);
  }
  Tensor out = Tensor::zeros({c, parts[0].dim(1), parts[0].dim(2)});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::memcpy(out.data() + off, p.data(), p.size() * sizeof(double));
    off += p.size();
  }
  return out;
}

Tensor loop_pool2(const Tensor& in) {
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  Tensor out = Tensor::zeros({c, h / 2, w / 2});
  for (int ic = 0; ic < c; ++ic) {
    for (int oy = 0; oy < h / 2; ++oy) {
      for (int ox = 0; ox < w / 2; ++ox) {
        double acc = 0.0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            acc += in[static_cast<std::size_t>(
                (ic * h + 2 * oy + dy) * w + 2 * ox + dx)];
          }
        }
        out[static_cast<std::size_t>((ic * (h / 2) + oy) * (w / 2) + ox)] =
            acc / 4.0;
      }
    }
  }
  return out;
}

// reference dense encoder built from the loop primitives above
Tensor encoder_oracle(const Tensor& slice, const ModelParams& params,
                      const ModelConfig& cfg) {
  std::vector<Tensor> feats = {slice};
  const int nb = static_cast<int>(cfg.block_layout.size());
  for (int b = 0; b < nb; ++b) {
    for (int l = 0; l < cfg.block_layout[static_cast<std::size_t>(b)]; ++l) {
      const std::string name = "encoder.block" + std::to_string(b) + ".layer" +
                               std::to_string(l) + ".conv";
      feats.push_back(
          loop_relu(loop_conv(loop_concat(feats), params.at(name), 1)));
    }
    const Tensor block_out = loop_concat(feats);
    if (b + 1 < nb) {
      const std::string name =
          "encoder.transition" + std::to_string(b) + ".conv";
      feats = {loop_pool2(loop_conv(block_out, params.at(name), 0))};
    } else {
      const int c = block_out.dim(0);
      const int hw = block_out.dim(1) * block_out.dim(2);
      Tensor out = Tensor::zeros({c});
      for (int ic = 0; ic < c; ++ic) {
        double acc = 0.0;
        for (int i = 0; i < hw; ++i) {
          acc += block_out[static_cast<std::size_t>(ic * hw + i)];
        }
        out[static_cast<std::size_t>(ic)] = acc / hw;
      }
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation rejects broken geometry") {
  ModelConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  ModelConfig bad = cfg;
  bad.input_hw = 15;  // 2-block layout pools once, needs an even edge
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.num_labels = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.block_layout = {};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.block_layout = {2, 0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.growth_rate = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.slices = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("canonical string and hash are stable") {
  ModelConfig cfg;
  CHECK(cfg.canonical_string() ==
        "hw=16;slices=4;growth=4;blocks=2,2;hidden=8;labels=6");
  CHECK(model_config_hash(cfg) ==
        fnv1a64("hw=16;slices=4;growth=4;blocks=2,2;hidden=8;labels=6"));

  ModelConfig other = cfg;
  other.slices = 3;
  CHECK(model_config_hash(other) != model_config_hash(cfg));
}

TEST_CASE("parameter layout follows the channel recurrence") {
  // independent recurrence for names, shapes and bias flags
  auto expected_layout = [](const ModelConfig& cfg) {
    std::vector<TensorSpecEntry> out;
    int c = 1;
    for (std::size_t b = 0; b < cfg.block_layout.size(); ++b) {
      for (int l = 0; l < cfg.block_layout[b]; ++l) {
        out.push_back({"encoder.block" + std::to_string(b) + ".layer" +
                           std::to_string(l) + ".conv",
                       {cfg.growth_rate, c + l * cfg.growth_rate, 3, 3},
                       false});
      }
      c += cfg.block_layout[b] * cfg.growth_rate;
      if (b + 1 < cfg.block_layout.size()) {
        const int half = c / 2 < 1 ? 1 : c / 2;
        out.push_back({"encoder.transition" + std::to_string(b) + ".conv",
                       {half, c, 1, 1},
                       false});
        c = half;
      }
    }
    for (const char* gate : {"z", "r", "h"}) {
      out.push_back({std::string("gru.w_") + gate, {cfg.gru_hidden, c}, false});
      out.push_back(
          {std::string("gru.u_") + gate, {cfg.gru_hidden, cfg.gru_hidden},
           false});
      out.push_back(
          {std::string("gru.b_") + gate, {cfg.gru_hidden, 1}, true});
    }
    out.push_back({"head.weight", {cfg.num_labels, cfg.gru_hidden}, false});
    out.push_back({"head.bias", {cfg.num_labels, 1}, true});
    return out;
  };

  ModelConfig deep;
  deep.input_hw = 8;
  deep.slices = 2;
  deep.growth_rate = 2;
  deep.block_layout = {1, 2, 1};
  deep.gru_hidden = 3;

  for (const ModelConfig& cfg : {ModelConfig{}, tiny_config(), deep}) {
    const auto got = parameter_layout(cfg);
    const auto want = expected_layout(cfg);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].name == want[i].name);
      CHECK(got[i].shape == want[i].shape);
      CHECK(got[i].is_bias == want[i].is_bias);
    }
  }
}

TEST_CASE("default model has the hand-summed coordinate count") {
  // block0: 4*1*9 + 4*5*9 = 216, transition: 4*9 = 36,
  // block1: 4*4*9 + 4*8*9 = 432, gru: 3*(8*12 + 8*8 + 8) = 504,
  // head: 6*8 + 6 = 54; total 1242
  ModelConfig cfg;
  const ModelParams params = build_model(cfg, 0);
  CHECK(params.coord_count() == 1242);
  CHECK(cfg.feature_length() == 12);
  CHECK(cfg.channels_into_block(0) == 1);
  CHECK(cfg.channels_into_block(1) == 4);
  CHECK(cfg.spatial_at_block(1) == 8);
}

TEST_CASE("initialization is seeded per tensor name") {
  ModelConfig cfg = tiny_config();
  const ModelParams a = build_model(cfg, 7);
  const ModelParams b = build_model(cfg, 7);
  CHECK(params_bitwise_equal(a, b));
  CHECK_FALSE(params_bitwise_equal(a, build_model(cfg, 8)));

  // every tensor must come from its own (seed, "init", name) stream and
  // respect the glorot bound
  for (const auto& entry : a.entries()) {
    const std::size_t numel = entry.value.size();
    const double fan_in =
        static_cast<double>(numel) / entry.value.dim(0);
    const double fan_out =
        static_cast<double>(numel) / entry.value.dim(1);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Rng rng(derive_key(7, {fnv1a64("init"), fnv1a64(entry.name)}));
    const Tensor replay =
        Tensor::uniform(entry.value.shape(), -bound, bound, rng);
    for (std::size_t i = 0; i < numel; ++i) {
      CHECK(std::abs(entry.value[i]) <= bound);
      CHECK(entry.value[i] == replay[i]);
    }
  }
}

TEST_CASE("bias names are classified correctly") {
  CHECK(is_bias_name("head.bias"));
  CHECK(is_bias_name("gru.b_z"));
  CHECK(is_bias_name("gru.b_h"));
  CHECK_FALSE(is_bias_name("head.weight"));
  CHECK_FALSE(is_bias_name("gru.w_z"));
  CHECK_FALSE(is_bias_name("encoder.block0.layer0.conv"));
}

TEST_CASE("model graph rejects missing or misshapen parameters") {
  ModelConfig cfg = tiny_config();
  ModelParams params = build_model(cfg, 1);

  ModelParams missing;
  for (const auto& entry : params.entries()) {
    if (entry.name != "head.bias") {
      missing.add(entry.name, entry.value, entry.is_bias);
    }
  }
  CHECK_THROWS_AS(ModelGraph(cfg, missing), ContractError);

  ModelParams wrong = params;
  wrong.at("head.weight") = Tensor::zeros({6, 4});
  CHECK_THROWS_AS(ModelGraph(cfg, wrong), ShapeError);
}

TEST_CASE("encoder matches an unrolled loop reference") {
  TRng rng(5);

  SUBCASE("single dense block") {
    ModelConfig cfg;
    cfg.input_hw = 6;
    cfg.slices = 1;
    cfg.growth_rate = 2;
    cfg.block_layout = {2};
    cfg.gru_hidden = 2;
    const ModelParams params = build_model(cfg, 3);
    const Tensor slice = rand_tensor({1, 6, 6}, rng);
    CHECK(max_abs_diff(encoder_forward(slice, params, cfg),
                       encoder_oracle(slice, params, cfg)) <= 1e-12);
  }

  SUBCASE("two blocks with a transition") {
    ModelConfig cfg;
    cfg.input_hw = 8;
    cfg.slices = 1;
    cfg.growth_rate = 3;
    cfg.block_layout = {1, 1};
    cfg.gru_hidden = 2;
    const ModelParams params = build_model(cfg, 4);
    const Tensor slice = rand_tensor({1, 8, 8}, rng);
    const Tensor got = encoder_forward(slice, params, cfg);
    CHECK(got.shape() == Shape{cfg.feature_length()});
    CHECK(max_abs_diff(got, encoder_oracle(slice, params, cfg)) <= 1e-12);
  }

  SUBCASE("default geometry") {
    ModelConfig cfg;
    const ModelParams params = build_model(cfg, 9);
    const Tensor slice = rand_tensor({1, 16, 16}, rng);
    CHECK(max_abs_diff(encoder_forward(slice, params, cfg),
                       encoder_oracle(slice, params, cfg)) <= 1e-12);
  }

  CHECK_THROWS_AS(encoder_forward(Tensor::zeros({1, 5, 5}),
                                  build_model(tiny_config(), 0),
                                  tiny_config()),
                  ShapeError);
}

TEST_CASE("time distribution applies one shared encoder per slice") {
  ModelConfig cfg = tiny_config();
  const ModelParams params = build_model(cfg, 11);
  TRng rng(12);
  const Tensor volume = rand_tensor({2, 1, 4, 4}, rng);

  const Tensor feats = time_distributed_forward(volume, params, cfg);
  REQUIRE(feats.shape() == Shape{2, cfg.feature_length()});
  for (int s = 0; s < 2; ++s) {
    Tensor slice = Tensor::zeros({1, 4, 4});
    std::memcpy(slice.data(), volume.data() + s * 16, 16 * sizeof(double));
    const Tensor one = encoder_forward(slice, params, cfg);
    for (int j = 0; j < cfg.feature_length(); ++j) {
      CHECK(feats[static_cast<std::size_t>(s * cfg.feature_length() + j)] ==
            one[static_cast<std::size_t>(j)]);
    }
  }

  // swapping slices swaps feature rows, nothing leaks across time
  Tensor swapped = Tensor::zeros({2, 1, 4, 4});
  std::memcpy(swapped.data(), volume.data() + 16, 16 * sizeof(double));
  std::memcpy(swapped.data() + 16, volume.data(), 16 * sizeof(double));
  const Tensor feats2 = time_distributed_forward(swapped, params, cfg);
  const int f = cfg.feature_length();
  for (int j = 0; j < f; ++j) {
    CHECK(feats2[static_cast<std::size_t>(j)] ==
          feats[static_cast<std::size_t>(f + j)]);
    CHECK(feats2[static_cast<std::size_t>(f + j)] ==
          feats[static_cast<std::size_t>(j)]);
  }

  CHECK_THROWS_AS(
      time_distributed_forward(Tensor::zeros({2, 2, 4, 4}), params, cfg),
      ShapeError);
  CHECK_THROWS_AS(
      time_distributed_forward(Tensor::zeros({3, 1, 4, 4}), params, cfg),
      ShapeError);
}

TEST_CASE("gru recurrence matches a scalar loop oracle") {
  ModelConfig cfg;
  const int f = cfg.feature_length(), hd = cfg.gru_hidden, steps = 3;
  const ModelParams params = build_model(cfg, 21);
  TRng rng(22);
  const Tensor features = rand_tensor({steps, f}, rng);

  const Tensor got = gru_forward(features, params, cfg);
  REQUIRE(got.shape() == Shape{steps, hd});

  auto matvec = [&](const Tensor& m, const std::vector<double>& v) {
    std::vector<double> out(static_cast<std::size_t>(m.dim(0)), 0.0);
    for (int i = 0; i < m.dim(0); ++i) {
      for (int j = 0; j < m.dim(1); ++j) {
        out[static_cast<std::size_t>(i)] +=
            m[static_cast<std::size_t>(i * m.dim(1) + j)] *
            v[static_cast<std::size_t>(j)];
      }
    }
    return out;
  };

  std::vector<double> h(static_cast<std::size_t>(hd), 0.0);
  for (int s = 0; s < steps; ++s) {
    std::vector<double> x(static_cast<std::size_t>(f));
    for (int j = 0; j < f; ++j) {
      x[static_cast<std::size_t>(j)] =
          features[static_cast<std::size_t>(s * f + j)];
    }
    const auto wzx = matvec(params.at("gru.w_z"), x);
    const auto uzh = matvec(params.at("gru.u_z"), h);
    const auto wrx = matvec(params.at("gru.w_r"), x);
    const auto urh = matvec(params.at("gru.u_r"), h);
    std::vector<double> rh(static_cast<std::size_t>(hd));
    std::vector<double> z(static_cast<std::size_t>(hd));
    for (int i = 0; i < hd; ++i) {
      const double zi = wzx[static_cast<std::size_t>(i)] +
                        uzh[static_cast<std::size_t>(i)] +
                        params.at("gru.b_z")[static_cast<std::size_t>(i)];
      const double ri = wrx[static_cast<std::size_t>(i)] +
                        urh[static_cast<std::size_t>(i)] +
                        params.at("gru.b_r")[static_cast<std::size_t>(i)];
      z[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-zi));
      rh[static_cast<std::size_t>(i)] =
          (1.0 / (1.0 + std::exp(-ri))) * h[static_cast<std::size_t>(i)];
    }
    const auto whx = matvec(params.at("gru.w_h"), x);
    const auto uhrh = matvec(params.at("gru.u_h"), rh);
    for (int i = 0; i < hd; ++i) {
      const double cand =
          std::tanh(whx[static_cast<std::size_t>(i)] +
                    uhrh[static_cast<std::size_t>(i)] +
                    params.at("gru.b_h")[static_cast<std::size_t>(i)]);
      h[static_cast<std::size_t>(i)] =
          h[static_cast<std::size_t>(i)] -
          z[static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(i)] +
          z[static_cast<std::size_t>(i)] * cand;
      CHECK(std::abs(got[static_cast<std::size_t>(s * hd + i)] -
                     h[static_cast<std::size_t>(i)]) <= 1e-12);
    }
  }

  CHECK_THROWS_AS(gru_forward(Tensor::zeros({2, f + 1}), params, cfg),
                  ShapeError);
}

TEST_CASE("gru gates saturate as designed") {
  ModelConfig cfg = tiny_config();
  ModelParams params = build_model(cfg, 1);
  const int f = cfg.feature_length(), hd = cfg.gru_hidden;
  for (const char* gate : {"z", "h"}) {
    params.at(std::string("gru.w_") + gate) = Tensor::zeros({hd, f});
    params.at(std::string("gru.u_") + gate) = Tensor::zeros({hd, hd});
  }

  TRng rng(88);
  const Tensor features = rand_tensor({4, f}, rng);

  SUBCASE("open update gate copies the candidate") {
    params.at("gru.b_z") = Tensor::full({hd, 1}, 20.0);
    params.at("gru.b_h") = Tensor::full({hd, 1}, std::atanh(0.5));
    const Tensor hidden = gru_forward(features, params, cfg);
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      CHECK(hidden[i] == doctest::Approx(0.5).epsilon(1e-7));
    }
  }

  SUBCASE("closed update gate freezes the state at zero") {
    params.at("gru.b_z") = Tensor::full({hd, 1}, -20.0);
    const Tensor hidden = gru_forward(features, params, cfg);
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      CHECK(std::abs(hidden[i]) < 1e-7);
    }
  }
}

TEST_CASE("gru hidden state stays inside the unit box") {
  ModelConfig cfg = tiny_config();
  TRng rng(17);
  for (int rep = 0; rep < 5; ++rep) {
    const ModelParams params = build_model(cfg, 100 + rep);
    Tensor features = rand_tensor({6, cfg.feature_length()}, rng);
    for (std::size_t i = 0; i < features.size(); ++i) {
      features[i] *= 10.0;  // push the gates hard
    }
    const Tensor hidden = gru_forward(features, params, cfg);
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      CHECK(std::abs(hidden[i]) <= 1.0);
    }
  }
}

TEST_CASE("gru output depends on slice order") {
  ModelConfig cfg = tiny_config();
  const ModelParams params = build_model(cfg, 31);
  TRng rng(32);
  const int f = cfg.feature_length();
  const Tensor fwd = rand_tensor({3, f}, rng);
  Tensor rev = Tensor::zeros({3, f});
  for (int s = 0; s < 3; ++s) {
    std::memcpy(rev.data() + s * f, fwd.data() + (2 - s) * f,
                static_cast<std::size_t>(f) * sizeof(double));
  }
  const Tensor ha = gru_forward(fwd, params, cfg);
  const Tensor hb = gru_forward(rev, params, cfg);
  double diff = 0.0;
  for (int i = 0; i < cfg.gru_hidden; ++i) {
    diff = std::max(diff, std::abs(ha[static_cast<std::size_t>(
                              2 * cfg.gru_hidden + i)] -
                          hb[static_cast<std::size_t>(2 * cfg.gru_hidden + i)]));
  }
  CHECK(diff > 1e-12);
}

TEST_CASE("classification head is affine per step") {
  ModelConfig cfg = tiny_config();
  ModelParams params = build_model(cfg, 41);
  TRng rng(42);
  const Tensor hidden = rand_tensor({2, cfg.gru_hidden}, rng);
  const Tensor logits = classify(hidden, params, cfg);
  REQUIRE(logits.shape() == Shape{2, 6});

  const Tensor& w = params.at("head.weight");
  const Tensor& b = params.at("head.bias");
  for (int s = 0; s < 2; ++s) {
    for (int j = 0; j < 6; ++j) {
      double acc = b[static_cast<std::size_t>(j)];
      for (int i = 0; i < cfg.gru_hidden; ++i) {
        acc += w[static_cast<std::size_t>(j * cfg.gru_hidden + i)] *
               hidden[static_cast<std::size_t>(s * cfg.gru_hidden + i)];
      }
      CHECK(std::abs(logits[static_cast<std::size_t>(s * 6 + j)] - acc) <=
            1e-12);
    }
  }

  CHECK_THROWS_AS(classify(Tensor::zeros({2, cfg.gru_hidden + 1}), params, cfg),
                  ShapeError);
}

TEST_CASE("forward_volume equals the composed stage functions") {
  ModelConfig cfg = tiny_config();
  const ModelParams params = build_model(cfg, 51);
  TRng rng(52);
  const Tensor volume = rand_tensor({2, 1, 4, 4}, rng);

  const Tensor direct = forward_volume(volume, params, cfg);
  const Tensor staged = classify(
      gru_forward(time_distributed_forward(volume, params, cfg), params, cfg),
      params, cfg);
  CHECK(max_abs_diff(direct, staged) <= 1e-12);
}

TEST_CASE("volume scores take the per-label max over slices") {
  Tensor logits = Tensor::zeros({2, 6});
  const double vals[12] = {0.0, 2.0, -1.0, 0.5, -3.0, 1.0,
                           1.0, -2.0, 0.25, 0.5, -1.0, 4.0};
  for (std::size_t i = 0; i < 12; ++i) {
    logits[i] = vals[i];
  }
  const std::array<double, 6> scores = volume_scores(logits);
  for (int j = 0; j < 6; ++j) {
    const double a = 1.0 / (1.0 + std::exp(-vals[j]));
    const double b = 1.0 / (1.0 + std::exp(-vals[6 + j]));
    CHECK(scores[static_cast<std::size_t>(j)] ==
          doctest::Approx(std::max(a, b)).epsilon(1e-12));
  }

  CHECK_THROWS_AS(volume_scores(Tensor::zeros({2, 5})), ShapeError);
  CHECK_THROWS_AS(volume_scores(Tensor::zeros({1, 6}).reshaped({6})),
                  ShapeError);
}

TEST_CASE("batch loss is the mean of per-volume losses") {
  ModelConfig cfg = tiny_config();
  const ModelParams params = build_model(cfg, 61);
  const std::vector<VolumeSample> data = generate_dataset(2, cfg, 5);

  const LossAndGrad both =
      batch_loss_and_grad(params, {&data[0], &data[1]}, cfg);
  const LossAndGrad a = batch_loss_and_grad(params, {&data[0]}, cfg);
  const LossAndGrad b = batch_loss_and_grad(params, {&data[1]}, cfg);
  CHECK(std::abs(both.loss - 0.5 * (a.loss + b.loss)) <= 1e-12);
  for (std::size_t e = 0; e < both.grads.entries().size(); ++e) {
    const auto& ga = a.grads.entries()[e].value;
    const auto& gb = b.grads.entries()[e].value;
    const auto& g2 = both.grads.entries()[e].value;
    for (std::size_t i = 0; i < g2.size(); ++i) {
      CHECK(std::abs(g2[i] - 0.5 * (ga[i] + gb[i])) <= 1e-12);
    }
  }

  CHECK_THROWS_AS(batch_loss_and_grad(params, {}, cfg), ContractError);
}

TEST_CASE("train step is one explicit gradient descent update") {
  ModelConfig cfg = tiny_config();
  const ModelParams params = build_model(cfg, 71);
  const std::vector<VolumeSample> data = generate_dataset(2, cfg, 6);
  const std::vector<const VolumeSample*> batch = {&data[0], &data[1]};

  const TrainStepResult frozen = train_step(params, batch, cfg, 0.0);
  CHECK(params_bitwise_equal(frozen.params, params));

  const double lr = 0.25;
  const LossAndGrad lg = batch_loss_and_grad(params, batch, cfg);
  ModelParams manual = params;
  add_scaled(manual, lg.grads, -lr);
  const TrainStepResult stepped = train_step(params, batch, cfg, lr);
  CHECK(stepped.loss == lg.loss);
  CHECK(params_bitwise_equal(stepped.params, manual));
}

TEST_CASE("repeated small steps on one batch reduce the loss") {
  ModelConfig cfg = tiny_config();
  ModelParams params = build_model(cfg, 81);
  const std::vector<VolumeSample> data = generate_dataset(4, cfg, 7);
  std::vector<const VolumeSample*> batch;
  for (const auto& s : data) {
    batch.push_back(&s);
  }

  const double initial = batch_loss_and_grad(params, batch, cfg).loss;
  double last = initial;
  for (int step = 0; step < 30; ++step) {
    const TrainStepResult r = train_step(params, batch, cfg, 0.05);
    params = r.params;
    last = r.loss;
  }
  CHECK(last < initial);
  CHECK(std::isfinite(last));
}

TEST_CASE("model gradients pass a finite difference audit") {
  ModelConfig cfg = tiny_config();
  const ModelParams params = build_model(cfg, 91);
  const std::vector<VolumeSample> data = generate_dataset(1, cfg, 8);
  const std::vector<const VolumeSample*> batch = {&data[0]};

  LossFn fn = [&](const ModelParams& p) {
    return batch_loss_and_grad(p, batch, cfg);
  };
  CHECK(gradient_check(fn, params, 1e-5, params.coord_count()) < 1e-4);
}

TEST_CASE("magnitude pruning zeroes the smallest non-bias weights") {
  Tensor w = Tensor::zeros({4});
  w[0] = 1.0;
  w[1] = -4.0;
  w[2] = 2.0;
  w[3] = -3.0;
  Tensor b = Tensor::zeros({2});
  b[0] = 0.001;
  b[1] = -0.002;
  ModelParams params;
  params.add("w", w, false);
  params.add("b", b, true);

  const PruneResult half = prune_by_magnitude(params, 0.5);
  CHECK(half.params.at("w")[0] == 0.0);
  CHECK(half.params.at("w")[1] == -4.0);
  CHECK(half.params.at("w")[2] == 0.0);
  CHECK(half.params.at("w")[3] == -3.0);
  CHECK(half.mask.at("w")[0] == 0.0);
  CHECK(half.mask.at("w")[1] == 1.0);
  CHECK(half.mask.at("w")[2] == 0.0);
  CHECK(half.mask.at("w")[3] == 1.0);
  // biases are exempt no matter how small
  CHECK(half.params.at("b")[0] == 0.001);
  CHECK(half.params.at("b")[1] == -0.002);
  CHECK(half.mask.at("b")[0] == 1.0);
  CHECK(half.mask.at("b")[1] == 1.0);

  const PruneResult none = prune_by_magnitude(params, 0.0);
  CHECK(params_bitwise_equal(none.params, params));
  const PruneResult all = prune_by_magnitude(params, 1.0);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(all.params.at("w")[i] == 0.0);
  }
  CHECK(all.params.at("b")[0] == 0.001);

  CHECK_THROWS_AS(prune_by_magnitude(params, -0.1), DomainError);
  CHECK_THROWS_AS(prune_by_magnitude(params, 1.5), DomainError);
}

TEST_CASE("pruning ties break on entry order then flat index") {
  Tensor w = Tensor::zeros({4});
  w[0] = 1.0;
  w[1] = 1.0;
  w[2] = 1.0;
  w[3] = 2.0;
  ModelParams params;
  params.add("w", w, false);
  const PruneResult r = prune_by_magnitude(params, 0.5);
  CHECK(r.params.at("w")[0] == 0.0);
  CHECK(r.params.at("w")[1] == 0.0);
  CHECK(r.params.at("w")[2] == 1.0);
  CHECK(r.params.at("w")[3] == 2.0);
}

TEST_CASE("params flatten and unflatten round-trip bitwise") {
  ModelConfig cfg = tiny_config();
  const ModelParams params = build_model(cfg, 99);
  const std::vector<double> flat = params.flatten();
  CHECK(flat.size() == params.coord_count());
  ModelParams rebuilt = params;
  params_scale(rebuilt, 0.0);
  rebuilt.unflatten(flat);
  CHECK(params_bitwise_equal(rebuilt, params));
}

}  // TEST_SUITE
