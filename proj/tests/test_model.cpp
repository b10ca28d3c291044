#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <vector>

#include "carpe/model.hpp"
#include "carpe/weights.hpp"
#include "support/temp_dir.hpp"

using carpe::FrameSample;
using carpe::ModelConfig;
using carpe::PedWindow;
using carpe::Shape;
using carpe::Tape;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

// Straight-line walkers with slightly different headings; enough structure to
// overfit and to exercise multi-pedestrian forward passes.
FrameSample make_sample(int num_peds, int beta, int horizon, double phase) {
  FrameSample sample;
  sample.scene_id = "synthetic";
  sample.window_start_frame = 0;
  for (int i = 0; i < num_peds; ++i) {
    PedWindow ped;
    ped.ped_id = i + 1;
    const double vx = 0.3 + 0.1 * i + phase;
    const double vy = 0.2 - 0.05 * i;
    for (int t = 0; t < beta + horizon; ++t) {
      carpe::Point pt = {2.0 * i + vx * t, -1.0 * i + vy * t};
      if (t < beta) {
        ped.observed_abs.push_back(pt);
      } else {
        ped.future_abs.push_back(pt);
      }
    }
    ped.origin = ped.observed_abs.front();
    ped.observed_rel = carpe::to_relative(ped.observed_abs);
    sample.peds.push_back(ped);
  }
  return sample;
}

std::vector<char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

template <class S>
std::vector<S> all_values(const carpe::CarpeModel<S>& model) {
  std::vector<S> out;
  for (const auto& p : model.parameters()) {
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return out;
}

}  // namespace

TEST_CASE("model construction and parameter count") {
  auto model = carpe::make_model<float>(ModelConfig{}, 7);

  SECTION("the default architecture carries 87185 trainable parameters") {
    CHECK(carpe::count_params(model) == 87185u);
    const auto params = model.parameters();
    REQUIRE(params.size() == 19u);
    // per-block sizes: embedding, two MLPs, eps, four conv layers
    std::size_t embed = params[0].numel() + params[1].numel();
    std::size_t phi_self = 0, phi_neigh = 0;
    for (int i = 2; i < 6; ++i) {
      phi_self += params[static_cast<std::size_t>(i)].numel();
    }
    for (int i = 6; i < 10; ++i) {
      phi_neigh += params[static_cast<std::size_t>(i)].numel();
    }
    CHECK(embed == 2112u);
    CHECK(phi_self == 2608u);
    CHECK(phi_neigh == 2608u);
    CHECK(params[10].numel() == 1u);
    CHECK(params[11].numel() + params[12].numel() == 1152u);    // conv1
    CHECK(params[13].numel() + params[14].numel() == 65792u);   // conv2
    CHECK(params[15].numel() + params[16].numel() == 12312u);   // conv3
    CHECK(params[17].numel() + params[18].numel() == 600u);     // conv4
  }

  SECTION("seeds pin the initialization") {
    auto again = carpe::make_model<float>(ModelConfig{}, 7);
    auto other = carpe::make_model<float>(ModelConfig{}, 8);
    CHECK(all_values(model) == all_values(again));
    CHECK(all_values(model) != all_values(other));
  }

  SECTION("parameters share storage with the model") {
    auto params = model.parameters();
    params[10].values()[0] = 0.5f;
    CHECK(model.graph.eps.item() == 0.5f);
  }
}

TEST_CASE("count_flops") {
  auto model = carpe::make_model<float>(ModelConfig{}, 1);

  SECTION("frozen per-pedestrian cost") {
    auto e = carpe::count_flops(model, 1);
    CHECK(e.macs_per_ped == 155200u);
    CHECK(e.extra_ops_per_ped == 1312u);
    CHECK(e.frame_macs == 155200u);
    CHECK(e.frame_extra_ops == 1313u);  // one pairwise term never fires at P = 1
    CHECK(e.frame_flops == 2u * 155200u + 1313u);
  }

  SECTION("the pairwise neighborhood term scales quadratically") {
    auto e = carpe::count_flops(model, 10);
    CHECK(e.frame_macs == 1552000u);
    CHECK(e.frame_extra_ops == 13120u + 90u * 64u + 1u);
    CHECK(e.frame_flops == 2u * e.frame_macs + e.frame_extra_ops);
    CHECK_THAT(e.frame_mflops, WithinAbs(e.frame_flops / 1.0e6, 1e-12));
  }

  SECTION("at least one pedestrian") {
    CHECK_THROWS_AS(carpe::count_flops(model, 0), std::invalid_argument);
  }
}

TEST_CASE("model forward") {
  ModelConfig config;
  config.c1 = 8;
  config.c2 = 8;
  auto model = carpe::make_model<double>(config, 3);
  FrameSample sample = make_sample(3, config.beta, config.horizon, 0.0);

  SECTION("relative output shape and absolute alignment") {
    carpe::Tensor<double> rel = carpe::forward_rel(model, sample);
    REQUIRE(rel.shape() == Shape{3, 12, 2});
    std::vector<carpe::Path> abs = carpe::forward(model, sample);
    REQUIRE(abs.size() == 3u);
    for (std::size_t i = 0; i < abs.size(); ++i) {
      REQUIRE(abs[i].size() == 12u);
      for (int t = 0; t < 12; ++t) {
        const std::size_t base = (i * 12 + static_cast<std::size_t>(t)) * 2;
        CHECK(abs[i][static_cast<std::size_t>(t)][0] ==
              rel.values()[base] + sample.peds[i].origin[0]);
        CHECK(abs[i][static_cast<std::size_t>(t)][1] ==
              rel.values()[base + 1] + sample.peds[i].origin[1]);
      }
    }
  }

  SECTION("observation length must match the architecture") {
    FrameSample bad = sample;
    bad.peds[0].observed_abs.pop_back();
    bad.peds[0].observed_rel.pop_back();
    CHECK_THROWS_AS(carpe::forward_rel(model, bad), std::invalid_argument);
    FrameSample empty;
    CHECK_THROWS_AS(carpe::forward_rel(model, empty), std::invalid_argument);
  }
}

TEST_CASE("per-frame gradient seeding realizes the batch mean") {
  ModelConfig config;
  config.horizon = 2;
  config.c1 = 4;
  config.c2 = 4;
  auto model = carpe::make_model<double>(config, 5);
  auto params = model.parameters();
  for (auto& p : params) {
    p.set_requires_grad(true);
  }
  std::vector<FrameSample> frames = {make_sample(2, 8, 2, 0.0), make_sample(3, 8, 2, 0.33)};

  auto target_for = [&](const FrameSample& f) {
    carpe::Tensor<double> t({static_cast<int>(f.peds.size()), 2, 2});
    auto tv = t.values();
    std::size_t idx = 0;
    for (const auto& ped : f.peds) {
      for (int s = 0; s < 2; ++s) {
        tv[idx++] = ped.future_abs[static_cast<std::size_t>(s)][0] - ped.origin[0];
        tv[idx++] = ped.future_abs[static_cast<std::size_t>(s)][1] - ped.origin[1];
      }
    }
    return t;
  };

  // pass 1: one frame at a time, backward seeded with the element share
  const std::size_t n0 = frames[0].peds.size() * 4, n1 = frames[1].peds.size() * 4;
  const double total = static_cast<double>(n0 + n1);
  for (auto& p : params) {
    p.zero_grad();
  }
  for (std::size_t f = 0; f < frames.size(); ++f) {
    Tape<double> tape;
    auto loss = carpe::mse_loss(carpe::forward_rel(model, frames[f], &tape), target_for(frames[f]), &tape);
    tape.backward(loss, static_cast<double>(f == 0 ? n0 : n1) / total);
  }
  std::vector<std::vector<double>> seeded;
  for (auto& p : params) {
    seeded.emplace_back(p.grad().begin(), p.grad().end());
    p.zero_grad();
  }

  // pass 2: the literal mean over every element of both frames
  Tape<double> tape;
  auto pred_all = carpe::concat(
      carpe::reshape(carpe::forward_rel(model, frames[0], &tape), {static_cast<int>(n0)}, &tape),
      carpe::reshape(carpe::forward_rel(model, frames[1], &tape), {static_cast<int>(n1)}, &tape),
      &tape);
  auto target_all = carpe::concat(carpe::reshape(target_for(frames[0]), {static_cast<int>(n0)}),
                                  carpe::reshape(target_for(frames[1]), {static_cast<int>(n1)}));
  auto loss = carpe::mse_loss(pred_all, target_all, &tape);
  tape.backward(loss);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = params[i].grad();
    for (std::size_t k = 0; k < g.size(); ++k) {
      CHECK_THAT(seeded[i][k], WithinAbs(g[k], 1e-12));
    }
  }
}

TEST_CASE("training") {
  ModelConfig config;
  config.horizon = 2;
  config.c1 = 8;
  config.c2 = 8;

  SECTION("zero epochs leaves the model untouched") {
    auto model = carpe::make_model<double>(config, 11);
    const auto before = all_values(model);
    carpe::TrainConfig tc;
    tc.epochs = 0;
    auto report = carpe::train(model, {make_sample(2, 8, 2, 0.0)}, tc);
    CHECK(report.epoch_loss.empty());
    CHECK(report.optimizer_steps == 0u);
    CHECK(all_values(model) == before);
  }

  SECTION("the first recorded loss is the exact initial displacement MSE") {
    auto model = carpe::make_model<double>(config, 11);
    auto probe = carpe::make_model<double>(config, 11);
    std::vector<FrameSample> frames = {make_sample(2, 8, 2, 0.0), make_sample(3, 8, 2, 0.5)};
    carpe::TrainConfig tc;
    tc.epochs = 1;
    tc.frame_batch = 16;  // both frames land in one optimizer step
    auto report = carpe::train(model, frames, tc);
    REQUIRE(report.epoch_loss.size() == 1u);

    double sse = 0.0;
    std::size_t elems = 0;
    for (const auto& frame : frames) {
      auto rel = carpe::forward_rel(probe, frame);
      auto rv = rel.values();
      std::size_t idx = 0;
      for (const auto& ped : frame.peds) {
        for (int t = 0; t < 2; ++t) {
          for (int d = 0; d < 2; ++d) {
            const double diff = rv[idx++] - (ped.future_abs[static_cast<std::size_t>(t)][d] - ped.origin[d]);
            sse += diff * diff;
          }
        }
      }
      elems += idx;
    }
    CHECK_THAT(report.epoch_loss[0], WithinAbs(sse / static_cast<double>(elems), 1e-9));
    CHECK(report.optimizer_steps == 1u);
  }

  SECTION("overfits a single frame") {
    carpe::ModelConfig wide = config;
    wide.c1 = 16;
    wide.c2 = 16;
    auto model = carpe::make_model<double>(wide, 21);
    carpe::TrainConfig tc;
    tc.epochs = 300;
    auto report = carpe::train(model, {make_sample(2, 8, 2, 0.0)}, tc);
    CHECK(report.epoch_loss.back() < 1e-3);
    CHECK(report.epoch_loss.back() < report.epoch_loss.front());
  }

  SECTION("loss trends down on a small crowd") {
    auto model = carpe::make_model<double>(config, 11);
    std::vector<FrameSample> frames;
    for (int f = 0; f < 6; ++f) {
      frames.push_back(make_sample(3, 8, 2, 0.07 * f));
    }
    carpe::TrainConfig tc;
    tc.epochs = 10;
    tc.frame_batch = 4;
    auto report = carpe::train(model, frames, tc);
    CHECK(report.epoch_loss.back() < report.epoch_loss.front());
    CHECK(report.optimizer_steps == 10u * 2u);
  }

  SECTION("identical seeds give bit-identical trained weights") {
    testsupport::TempDir dir("train_det");
    std::vector<FrameSample> frames = {make_sample(2, 8, 2, 0.0), make_sample(3, 8, 2, 0.5),
                                       make_sample(2, 8, 2, 1.0)};
    carpe::TrainConfig tc;
    tc.epochs = 3;
    tc.frame_batch = 2;
    auto run = [&](std::uint32_t train_seed, const char* name) {
      auto model = carpe::make_model<float>(config, 21);
      carpe::TrainConfig cfg = tc;
      cfg.seed = train_seed;
      carpe::train(model, frames, cfg);
      carpe::save_weights(model, dir.file(name));
      return file_bytes(dir.file(name));
    };
    const auto a = run(9, "a.carpe");
    const auto b = run(9, "b.carpe");
    const auto c = run(10, "c.carpe");
    CHECK(a == b);
    CHECK(a != c);
  }

  SECTION("divergence aborts with a diagnostic") {
    auto model = carpe::make_model<double>(config, 11);
    carpe::TrainConfig tc;
    tc.epochs = 3;
    tc.lr = 1e200;  // Adam steps are lr-sized, so squaring the predictions overflows
    CHECK_THROWS_AS(carpe::train(model, {make_sample(2, 8, 2, 0.0)}, tc), std::runtime_error);
  }

  SECTION("input validation") {
    auto model = carpe::make_model<double>(config, 11);
    carpe::TrainConfig tc;
    CHECK_THROWS_AS(carpe::train(model, {}, tc), std::invalid_argument);
    tc.epochs = -1;
    CHECK_THROWS_AS(carpe::train(model, {make_sample(1, 8, 2, 0.0)}, tc), std::invalid_argument);
    tc.epochs = 1;
    tc.frame_batch = 0;
    CHECK_THROWS_AS(carpe::train(model, {make_sample(1, 8, 2, 0.0)}, tc), std::invalid_argument);
    tc.frame_batch = 1;
    auto bad = make_sample(1, 8, 3, 0.0);  // future length 3, horizon 2
    CHECK_THROWS_AS(carpe::train(model, {bad}, tc), std::invalid_argument);
  }
}

TEST_CASE("weight files") {
  testsupport::TempDir dir("weights");
  ModelConfig config;
  config.horizon = 2;
  config.c1 = 8;
  config.c2 = 8;

  SECTION("float round trip is bit-exact") {
    auto model = carpe::make_model<float>(config, 33);
    model.graph.eps.values()[0] = -0.125f;
    carpe::save_weights(model, dir.file("m.carpe"));
    auto loaded = carpe::load_weights<float>(dir.file("m.carpe"));
    CHECK(all_values(loaded) == all_values(model));
    CHECK(loaded.config.beta == config.beta);
    CHECK(loaded.config.horizon == config.horizon);
    CHECK(loaded.config.c1 == config.c1);
    CHECK(loaded.config.c2 == config.c2);
  }

  SECTION("the manifest mirrors the architecture") {
    auto model = carpe::make_model<float>(config, 33);
    carpe::save_weights(model, dir.file("m.carpe"));
    auto manifest = carpe::peek_weights(dir.file("m.carpe"));
    CHECK(manifest.beta == 8);
    CHECK(manifest.horizon == 2);
    CHECK(manifest.c1 == 8);
    CHECK(manifest.c2 == 8);
    CHECK(manifest.count == carpe::count_params(model));
    CHECK(carpe::render_manifest(ModelConfig{}, 87185) ==
          "beta=8\nT=12\nC1=128\nC2=256\ncount=87185\n");
  }

  SECTION("double models round through float32") {
    auto model = carpe::make_model<double>(config, 33);
    carpe::save_weights(model, dir.file("m.carpe"));
    auto loaded = carpe::load_weights<double>(dir.file("m.carpe"));
    const auto orig = all_values(model);
    const auto back = all_values(loaded);
    REQUIRE(orig.size() == back.size());
    for (std::size_t i = 0; i < orig.size(); ++i) {
      CHECK(back[i] == static_cast<double>(static_cast<float>(orig[i])));
    }
  }

  SECTION("rejects files that are not weight files") {
    std::ofstream(dir.file("junk.carpe"), std::ios::binary) << "definitely not weights";
    CHECK_THROWS_WITH(carpe::load_weights<float>(dir.file("junk.carpe")),
                      ContainsSubstring("bad magic"));
    CHECK_THROWS_AS(carpe::load_weights<float>(dir.file("missing.carpe")), std::runtime_error);
  }

  SECTION("rejects truncated payloads") {
    auto model = carpe::make_model<float>(config, 33);
    carpe::save_weights(model, dir.file("m.carpe"));
    auto bytes = file_bytes(dir.file("m.carpe"));
    bytes.resize(bytes.size() - 4);
    std::ofstream(dir.file("cut.carpe"), std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_WITH(carpe::load_weights<float>(dir.file("cut.carpe")),
                      ContainsSubstring("payload"));
  }

  SECTION("rejects a manifest that contradicts the architecture") {
    auto model = carpe::make_model<float>(config, 33);
    std::string blob;
    blob.append(carpe::kWeightMagic, sizeof(carpe::kWeightMagic));
    const std::string manifest = carpe::render_manifest(config, 12345);
    carpe::detail::put_u32_le(blob, static_cast<std::uint32_t>(manifest.size()));
    blob += manifest;
    for (const auto& p : model.parameters()) {
      for (float v : p.values()) {
        carpe::detail::put_f32_le(blob, v);
      }
    }
    std::ofstream(dir.file("bad.carpe"), std::ios::binary).write(blob.data(), static_cast<std::streamsize>(blob.size()));
    CHECK_THROWS_WITH(carpe::load_weights<float>(dir.file("bad.carpe")),
                      ContainsSubstring("does not match the declared architecture"));
  }

  SECTION("rejects a manifest with missing or mangled keys") {
    std::string blob;
    blob.append(carpe::kWeightMagic, sizeof(carpe::kWeightMagic));
    const std::string manifest = "beta=8\nT=2\nC1=8\n";  // no C2, no count
    carpe::detail::put_u32_le(blob, static_cast<std::uint32_t>(manifest.size()));
    blob += manifest;
    std::ofstream(dir.file("short.carpe"), std::ios::binary).write(blob.data(), static_cast<std::streamsize>(blob.size()));
    CHECK_THROWS_WITH(carpe::peek_weights(dir.file("short.carpe")),
                      ContainsSubstring("missing key"));
  }
}
