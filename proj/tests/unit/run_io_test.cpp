// Configuration parsing, checkpoint format, CSV/run-directory helpers and the
// trainer's determinism and resume guarantees.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>
#include <string>

#include "ssdrl/bench.h"
#include "ssdrl/checkpoint.h"
#include "ssdrl/config.h"
#include "ssdrl/errors.h"
#include "ssdrl/metrics_io.h"
#include "ssdrl/trainer.h"
#include "tiny_run.h"

namespace ssdrl {
namespace {

namespace fs = std::filesystem;
using testing::scratch_dir;
using testing::slurp;
using testing::tiny_run_config;

std::string error_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

// --- configuration ---------------------------------------------------------

TEST(ConfigTest, UnknownKeyIsRejectedByName) {
  RunConfig c;
  const std::string msg = error_message([&] { apply_setting(c, "ppo.gama", "0.9"); });
  EXPECT_NE(msg.find("ppo.gama"), std::string::npos) << msg;
  EXPECT_NE(error_message([&] { parse_config("world.bogus = 1\n"); }).find("world.bogus"),
            std::string::npos);
}

TEST(ConfigTest, MalformedValuesNameTheKey) {
  RunConfig c;
  for (const auto& [key, value] : std::vector<std::pair<std::string, std::string>>{
           {"ppo.gamma", "abc"},
           {"ppo.epochs", "-3"},
           {"model.backbone", "transformer"},
           {"run.salt_noise", "maybe"},
           {"world.obstacle_kind", "cube"},
           {"ppo.minibatch", "1.5"}}) {
    const std::string msg = error_message([&] { apply_setting(c, key, value); });
    EXPECT_NE(msg.find(key), std::string::npos) << key << " -> " << msg;
  }
  EXPECT_FALSE(error_message([&] { apply_overrides(c, {"no_equals_sign"}); }).empty());
}

TEST(ConfigTest, OverridesAreReflectedInTheSerialization) {
  RunConfig c;
  apply_overrides(c, {"ppo.gamma=0.97", "model.backbone=attention", "run.seeds=2..4"});
  EXPECT_DOUBLE_EQ(c.ppo.gamma, 0.97);
  EXPECT_EQ(c.model.backbone, BackboneKind::kAttention);
  EXPECT_EQ(c.run.seeds, (std::vector<std::uint64_t>{2, 3, 4}));
  const std::string text = serialize_config(c);
  EXPECT_NE(text.find("ppo.gamma=0.97\n"), std::string::npos);
  EXPECT_NE(text.find("model.backbone=attention\n"), std::string::npos);
  EXPECT_NE(config_digest(c), config_digest(RunConfig{}));
}

TEST(ConfigTest, SerializationRoundTripsExactly) {
  RunConfig c = tiny_run_config();
  c.ppo.policy_lr = 1.0 / 3.0;
  c.world.dt = 0.1 + 0.2;  // not representable as a short decimal
  const std::string text = serialize_config(c);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(config_digest(back), config_digest(c));
  EXPECT_EQ(back.ppo.policy_lr, c.ppo.policy_lr);
  EXPECT_EQ(back.world.dt, c.world.dt);
}

TEST(ConfigTest, EveryKeyAppearsOnceInFixedOrder) {
  const std::vector<std::string> keys = config_keys();
  const std::string text = serialize_config(RunConfig{});
  std::size_t pos = 0;
  for (const std::string& k : keys) {
    const std::size_t at = text.find(k + "=", pos);
    ASSERT_NE(at, std::string::npos) << k;
    pos = at + 1;
  }
  std::set<std::string> unique(keys.begin(), keys.end());
  EXPECT_EQ(unique.size(), keys.size());
}

TEST(ConfigTest, CommentsAndWhitespaceAreIgnored) {
  const RunConfig c = parse_config("# comment\n\n  ppo.epochs =  5 \nrun.seeds=1,7\n");
  EXPECT_EQ(c.ppo.epochs, 5u);
  EXPECT_EQ(c.run.seeds, (std::vector<std::uint64_t>{1, 7}));
}

TEST(ConfigTest, FrameSizeFollowsDepthResolution) {
  RunConfig c;
  apply_setting(c, "world.depth_resolution", "24");
  EXPECT_EQ(c.model.frame_size, 24u);
}

TEST(ConfigTest, CrossFieldValidation) {
  RunConfig c;
  c.model.patch_size = 5;  // does not divide 32
  EXPECT_THROW(validate(c), ConfigError);
  RunConfig d;
  d.run.seeds.clear();
  EXPECT_THROW(validate(d), ConfigError);
  EXPECT_NO_THROW(validate(tiny_run_config()));
}

// --- checkpoints -----------------------------------------------------------

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  ck.config_digest = 0x0123456789abcdefULL;
  ck.iteration = 17;
  ck.tensors.push_back({"a", {2, 3}, {1, 2, 3, 4, 5, -6.5f}});
  ck.tensors.push_back({"b", {1}, {std::nextafter(0.0f, 1.0f)}});
  ck.counters.emplace_back("steps", -42);
  ck.rngs.emplace_back("env", Rng(9).state());
  return ck;
}

TEST(CheckpointTest, EncodeDecodeRoundTrip) {
  const Checkpoint ck = sample_checkpoint();
  const std::string bytes = encode_checkpoint(ck);
  EXPECT_EQ(bytes.substr(0, 4), "SSDM");
  EXPECT_EQ(decode_checkpoint(bytes), ck);
  EXPECT_EQ(encode_checkpoint(decode_checkpoint(bytes)), bytes);
  EXPECT_EQ(decode_checkpoint(encode_checkpoint(Checkpoint{})), Checkpoint{});
}

TEST(CheckpointTest, EveryTruncationIsAnIntegrityError) {
  const std::string bytes = encode_checkpoint(sample_checkpoint());
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    try {
      decode_checkpoint(bytes.substr(0, n));
      FAIL() << "prefix of " << n << " bytes decoded";
    } catch (const IntegrityError& e) {
      EXPECT_LE(e.offset(), n);
      EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
  }
}

TEST(CheckpointTest, EveryFlippedByteIsDetected) {
  const std::string bytes = encode_checkpoint(sample_checkpoint());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    std::string bad = bytes;
    bad[i] = char(bad[i] ^ 0x10);
    EXPECT_THROW(decode_checkpoint(bad), IntegrityError) << "byte " << i;
  }
}

TEST(CheckpointTest, VersionBumpIsRejectedWithClearMessage) {
  std::string bytes = encode_checkpoint(sample_checkpoint());
  const std::uint32_t v = kCheckpointVersion + 1;
  std::memcpy(bytes.data() + 4, &v, 4);
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
    EXPECT_EQ(e.offset(), 4u);
  }
}

TEST(CheckpointTest, FullModelParamsAndMomentsRoundTripBitExact) {
  const RunConfig cfg = tiny_run_config();
  ParamStore<float> a;
  Rng rng(5);
  init_policy(a, cfg.model, rng);
  for (auto& [name, e] : a.entries()) {
    for (float& m : e.moment1.data()) m = float(rng.normal());
    for (float& m : e.moment2.data()) m = float(rng.uniform());
  }
  Checkpoint ck;
  store_params(ck, a);
  ParamStore<float> b;
  Rng other(99);
  init_policy(b, cfg.model, other);
  restore_params(decode_checkpoint(encode_checkpoint(ck)), b);
  for (const auto& [name, e] : a.entries()) {
    const auto& f = b.entry(name);
    EXPECT_EQ(std::memcmp(e.value.data().data(), f.value.data().data(), e.value.size() * 4), 0);
    EXPECT_EQ(std::memcmp(e.moment1.data().data(), f.moment1.data().data(),
                          e.moment1.size() * 4), 0);
    EXPECT_EQ(std::memcmp(e.moment2.data().data(), f.moment2.data().data(),
                          e.moment2.size() * 4), 0);
  }
}

TEST(CheckpointTest, RestoreRejectsMissingOrMisshapenParams) {
  ParamStore<float> a;
  a.add("w", Tensor<float>({2, 2}));
  Checkpoint ck;
  store_params(ck, a);
  ParamStore<float> wrong_shape;
  wrong_shape.add("w", Tensor<float>({4}));
  EXPECT_THROW(restore_params(ck, wrong_shape), IntegrityError);
  ParamStore<float> extra;
  extra.add("w", Tensor<float>({2, 2}));
  extra.add("v", Tensor<float>({1}));
  EXPECT_THROW(restore_params(ck, extra), IntegrityError);
}

TEST(CheckpointTest, SaveLoadSaveIsByteIdentical) {
  const fs::path dir = scratch_dir("ckpt");
  const Checkpoint ck = sample_checkpoint();
  save_checkpoint(dir / "a.ssdm", ck);
  save_checkpoint(dir / "b.ssdm", load_checkpoint(dir / "a.ssdm"));
  EXPECT_EQ(slurp(dir / "a.ssdm"), slurp(dir / "b.ssdm"));
  EXPECT_THROW(load_checkpoint(dir / "missing.ssdm"), IntegrityError);
}

TEST(CheckpointTest, RngStateRoundTrips) {
  Rng r(123);
  for (int i = 0; i < 10; ++i) r.next_u64();
  Checkpoint ck;
  store_rng(ck, "x", r);
  Rng s(0);
  restore_rng(decode_checkpoint(encode_checkpoint(ck)), "x", s);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(r.next_u64(), s.next_u64());
}

// --- CSV and run directories ----------------------------------------------

TEST(MetricsIoTest, RowsHaveOneCellPerHeaderColumn) {
  MetricsRow m;
  m.iteration = 3;
  const std::string row = format_row(m);
  EXPECT_EQ(std::count(kMetricsHeader, kMetricsHeader + std::strlen(kMetricsHeader), ','),
            std::count(row.begin(), row.end(), ','));
  EXPECT_NE(row.find(",,"), std::string::npos);  // collisions absent -> empty cell
  m.collisions = 2.5;
  EXPECT_NE(format_row(m).find(",2.5,"), std::string::npos);
  EvalRow e;
  const std::string er = format_row(e);
  const std::string eh = kEvalHeader;
  EXPECT_EQ(std::count(eh.begin(), eh.end(), ','), std::count(er.begin(), er.end(), ','));
}

TEST(MetricsIoTest, AggregateOverTenSeeds) {
  const fs::path run = scratch_dir("aggregate");
  for (std::uint64_t s = 0; s < 10; ++s) {
    const fs::path d = seed_dir(run, s);
    fs::create_directories(d);
    start_csv(d / "metrics.csv", kMetricsHeader);
    for (std::size_t it = 1; it <= (s == 9 ? 2u : 3u); ++it) {
      MetricsRow m;
      m.iteration = it;
      m.seed = s;
      m.mean_return = double(s);  // 0..9
      m.distance_m = 1.0;
      append_csv(d / "metrics.csv", format_row(m));
    }
  }
  write_aggregate(run);
  const CsvTable t = read_csv(run / "aggregate.csv");
  ASSERT_EQ(t.rows.size(), 2u);  // iteration 3 is missing for seed 9
  for (const char* col : {"mean_return_mean", "mean_return_std", "distance_m_mean",
                          "distance_m_std", "entropy_mean", "clip_frac_std"}) {
    EXPECT_NO_THROW(t.column(col)) << col;
  }
  const auto& row = t.rows[0];
  EXPECT_EQ(row[t.column("seeds")], "10");
  EXPECT_DOUBLE_EQ(std::stod(row[t.column("mean_return_mean")]), 4.5);
  EXPECT_NEAR(std::stod(row[t.column("mean_return_std")]), std::sqrt(82.5 / 9.0), 1e-12);
  EXPECT_DOUBLE_EQ(std::stod(row[t.column("distance_m_std")]), 0.0);
}

TEST(MetricsIoTest, KeepRowsThroughTrimsLaterIterations) {
  const fs::path dir = scratch_dir("trim");
  const fs::path p = dir / "m.csv";
  start_csv(p, "iteration,x");
  for (int i = 1; i <= 5; ++i) append_csv(p, std::to_string(i) + ",v");
  keep_rows_through(p, "iteration,x", 3);
  EXPECT_EQ(slurp(p), "iteration,x\n1,v\n2,v\n3,v\n");
  keep_rows_through(dir / "new.csv", "iteration,x", 3);
  EXPECT_EQ(slurp(dir / "new.csv"), "iteration,x\n");
}

TEST(MetricsIoTest, InspectFreshAndMissingDirectories) {
  const fs::path run = scratch_dir("inspect");
  const std::string text = inspect_run(run);
  EXPECT_NE(text.find("0 iterations completed by every seed (0 seeds)"), std::string::npos)
      << text;
  EXPECT_NE(text.find("resolved.cfg"), std::string::npos);  // reported missing
  EXPECT_THROW(inspect_run(run / "nope"), ConfigError);
}

// --- trainer ---------------------------------------------------------------

TEST(TrainerTest, FixedSeedRunsAreByteIdentical) {
  const RunConfig cfg = tiny_run_config();
  const fs::path a = scratch_dir("det_a");
  const fs::path b = scratch_dir("det_b");
  train_run(cfg, a);
  train_run(cfg, b);
  for (const char* f : {"metrics.csv", "eval.csv", "checkpoint.ssdm"}) {
    const std::string x = slurp(seed_dir(a, 3) / f);
    EXPECT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, slurp(seed_dir(b, 3) / f)) << f;
  }
  EXPECT_EQ(slurp(a / "aggregate.csv"), slurp(b / "aggregate.csv"));
  EXPECT_EQ(slurp(a / "resolved.cfg"), serialize_config(cfg));
  const CsvTable t = read_csv(seed_dir(a, 3) / "metrics.csv");
  EXPECT_EQ(t.rows.size(), cfg.run.iterations);
  EXPECT_EQ(read_csv(seed_dir(a, 3) / "eval.csv").rows.size(), 2u);
  const std::string summary = inspect_run(a);
  EXPECT_NE(summary.find("4 iterations completed by every seed (1 seeds)"), std::string::npos)
      << summary;
}

TEST(TrainerTest, ResumeContinuesExactly) {
  const RunConfig cfg = tiny_run_config();
  const fs::path full = scratch_dir("resume_full");
  train_run(cfg, full);

  // Train two iterations (one checkpoint), then resume to the end.
  RunConfig half = cfg;
  half.run.iterations = 2;
  const fs::path part = scratch_dir("resume_part");
  {
    Trainer t(half, 3, seed_dir(part, 3));
    t.start();
    t.run();
  }
  // Damage the tail of the CSV as an interrupted run might leave it.
  append_csv(seed_dir(part, 3) / "metrics.csv", "3,3,garbage");
  train_run(cfg, part, /*resume=*/true);
  for (const char* f : {"metrics.csv", "eval.csv", "checkpoint.ssdm"}) {
    EXPECT_EQ(slurp(seed_dir(full, 3) / f), slurp(seed_dir(part, 3) / f)) << f;
  }
}

TEST(TrainerTest, CheckpointCarriesDigestIterationAndStreams) {
  const RunConfig cfg = tiny_run_config();
  Trainer t(cfg, 3, scratch_dir("ck_fields"));
  t.start();
  t.step();
  const Checkpoint ck = t.checkpoint();
  EXPECT_EQ(ck.config_digest, config_digest(cfg));
  EXPECT_EQ(ck.iteration, 1u);
  EXPECT_EQ(ck.rngs.size(), 4u);
  EXPECT_GT(find_counter(ck, "adam.policy.steps"), 0);
  EXPECT_EQ(ck.tensors.size(), 3 * t.params().size());
}

TEST(TrainerTest, DifferentSeedsDiffer) {
  RunConfig cfg = tiny_run_config();
  cfg.run.iterations = 1;
  cfg.run.seeds = {0, 1};
  const fs::path run = scratch_dir("two_seeds");
  train_run(cfg, run);
  EXPECT_NE(slurp(seed_dir(run, 0) / "metrics.csv"), slurp(seed_dir(run, 1) / "metrics.csv"));
  EXPECT_EQ(list_seeds(run), (std::vector<std::uint64_t>{0, 1}));
}

// --- scaling benchmark helpers --------------------------------------------

TEST(BenchTest, LogLogSlopeOfPowerLaws) {
  const std::vector<double> x{128, 512, 2048, 8192};
  std::vector<double> lin, quad;
  for (double v : x) {
    lin.push_back(3.0 * v);
    quad.push_back(0.5 * v * v);
  }
  EXPECT_NEAR(loglog_slope(x, lin), 1.0, 1e-12);
  EXPECT_NEAR(loglog_slope(x, quad), 2.0, 1e-12);
}

TEST(BenchTest, OptionsAreValidated) {
  ScalingOptions o;
  EXPECT_NO_THROW(validate(o));
  o.token_counts = {128, 256, 512, 1024};  // spans only 8x
  EXPECT_THROW(validate(o), ConfigError);
  o = ScalingOptions{};
  o.repeats = 3;
  EXPECT_THROW(validate(o), ConfigError);
  o = ScalingOptions{};
  o.token_counts = {128, 8192};
  EXPECT_THROW(validate(o), ConfigError);
}

TEST(BenchTest, SmallScalingRunReportsEveryPoint) {
  ScalingOptions o;
  o.token_counts = {16, 32, 64, 256};
  o.width = 8;
  o.chunk_size = 16;
  const ScalingReport r = bench_scaling(o);
  ASSERT_EQ(r.points.size(), 4u);
  for (const ScalingPoint& p : r.points) {
    EXPECT_GT(p.ssd_seconds, 0.0);
    EXPECT_GT(p.attention_seconds, 0.0);
    EXPECT_GT(p.attention_peak_bytes, 0u);
  }
  // The attention score matrix alone grows quadratically.
  EXPECT_GT(r.attention_memory_slope, 1.5);
}

}  // namespace
}  // namespace ssdrl
