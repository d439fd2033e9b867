#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "support.hpp"

using namespace fetalbet;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(const fs::path& dir, int epochs = 1, int batch = 8) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch;
  c.learning_rate = 1e-3;
  c.checkpoint_dir = dir.string();
  c.model = fbtest::small_spec(ModelFamily::attention_unet, 32);
  c.model.levels = 3;
  c.model.base_channels = 4;
  return c;
}

}  // namespace

TEST(Manifest, ParsesAndRejectsBadHeader) {
  std::istringstream ok(
      "subject_id,stack_path,mask_path,sequence,split\n"
      "s1,a.nii.gz,a_mask.nii.gz,T2W,train\n"
      "s2,\"b,1.nii.gz\",,DWI,test\n");
  const auto m = parse_manifest(ok);
  ASSERT_EQ(m.rows.size(), 2u);
  EXPECT_EQ(m.rows[1].stack_path, "b,1.nii.gz");
  EXPECT_FALSE(m.rows[1].mask_path.has_value());
  EXPECT_EQ(m.rows[1].sequence, Sequence::DWI);

  std::istringstream bad("subject,stack,mask,sequence,split\n");
  EXPECT_THROW(parse_manifest(bad), ValidationError);
  std::istringstream seq("subject_id,stack_path,mask_path,sequence,split\ns1,a,b,T1W,train\n");
  EXPECT_THROW(parse_manifest(seq), ValidationError);
}

TEST(Manifest, SubjectAcrossSplitsIsNamed) {
  std::istringstream in(
      "subject_id,stack_path,mask_path,sequence,split\n"
      "s1,a,m,T2W,train\n"
      "s1,b,m,fMRI,val\n");
  const auto m = parse_manifest(in);
  try {
    check_subject_disjointness(m);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("s1"), std::string::npos);
  }
}

TEST(SplitSubjects, ThreeSubjectsThreeSets) {
  const auto dir = fbtest::temp_dir("split3");
  const auto path = fbtest::write_synthetic_dataset(
      dir, {{"s1", Sequence::T2W, Split::train}, {"s2", Sequence::DWI, Split::val}, {"s3", Sequence::fMRI, Split::test}});
  SplitOptions opt;
  opt.patch_size = 32;
  const auto splits = split_subjects(load_manifest(path), opt);
  ASSERT_EQ(splits.train.size(), 4u);
  ASSERT_EQ(splits.val.size(), 4u);
  ASSERT_EQ(splits.test.size(), 4u);
  for (const auto& s : splits.train) EXPECT_EQ(s.sample.image.provenance.subject_id, "s1");
  for (const auto& s : splits.val) EXPECT_EQ(s.sample.image.provenance.subject_id, "s2");
  EXPECT_EQ(splits.test.front().sequence, Sequence::fMRI);
  EXPECT_EQ(splits.train.front().sample.image.pixels.rows(), 32u);
  EXPECT_TRUE(splits.warnings.empty());
}

TEST(SplitSubjects, EmptyValidationWarnsAndSequenceFilter) {
  const auto dir = fbtest::temp_dir("split_warn");
  const auto path = fbtest::write_synthetic_dataset(
      dir, {{"s1", Sequence::T2W, Split::train}, {"s2", Sequence::DWI, Split::train}});
  SplitOptions opt;
  opt.patch_size = 32;
  const auto all = split_subjects(load_manifest(path), opt);
  EXPECT_TRUE(all.val.empty());
  ASSERT_FALSE(all.warnings.empty());
  EXPECT_NE(all.warnings.back().find("validation"), std::string::npos);
  opt.sequence = Sequence::DWI;
  const auto dwi = split_subjects(load_manifest(path), opt);
  ASSERT_EQ(dwi.train.size(), 4u);
  for (const auto& s : dwi.train) EXPECT_EQ(s.sequence, Sequence::DWI);
}

TEST(Adam, SingleStepMatchesClosedForm) {
  nn::Param<double> p("w", nn::Shape{1, 1, 1, 2});
  p.value.values() = {1.0, -2.0};
  p.grad.values() = {0.5, -3.0};
  Adam<double> opt(0.1);
  opt.step({&p});
  // First Adam step moves each weight by lr * g / (|g| + eps').
  EXPECT_NEAR(p.value.values()[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_NEAR(p.value.values()[1], -2.0 + 0.1 * 3.0 / (3.0 + 1e-8), 1e-12);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Validate, OracleAndBackgroundPredictors) {
  const auto data = fbtest::disk_dataset(6, 32, 3);
  auto oracle = [](std::span<const Sample* const> batch) { return one_hot_batch<float>(batch); };
  const auto perfect = validate_with(oracle, data);
  EXPECT_EQ(perfect.mean_dsc, 1.0);
  EXPECT_EQ(perfect.mean_iou, 1.0);
  auto background = [](std::span<const Sample* const> batch) {
    auto t = one_hot_batch<float>(batch);
    for (std::size_t n = 0; n < t.n(); ++n) {
      for (auto& v : t.plane(n, 0)) v = 1.0f;
      for (auto& v : t.plane(n, 1)) v = 0.0f;
    }
    return t;
  };
  EXPECT_NEAR(validate_with(background, data).mean_dsc, 0.0, 1e-12);
  EXPECT_THROW(validate_with(oracle, SampleSet{}), ContractError);
}

TEST(Validate, MatchesEvaluationModule) {
  const auto data = fbtest::disk_dataset(5, 32, 4);
  auto model = build_model<float>(tiny_config("/tmp").model, 3);
  const auto vr = validate(model, data, {}, 2);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample* one[] = {&data[i].sample};
    const Mask pred = argmax_mask(model.predict(image_batch<float>(one)), 0);
    MaskVolume pv{pred.values(), {pred.rows(), pred.cols(), 1}, {1, 1, 1}};
    MaskVolume rv{data[i].sample.mask.values(), pv.dims, pv.spacing};
    const auto rows = evaluate_pair(pv, rv, {"s", "k", "T2W", "m"});
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].dsc, vr.slice_dsc[i]);
    EXPECT_EQ(rows[0].iou, vr.slice_iou[i]);
  }
}

TEST(Train, StepArithmeticAndOutputs) {
  const auto dir = fbtest::temp_dir("train_steps");
  const auto data = fbtest::disk_dataset(16, 32, 5);
  const auto val = fbtest::disk_dataset(4, 32, 6);
  const auto result = train(tiny_config(dir), data, val);
  EXPECT_EQ(result.history.optimizer_steps, 2u);
  EXPECT_EQ(result.history.step_losses.size(), 2u);
  ASSERT_EQ(result.history.epochs.size(), 1u);
  EXPECT_TRUE(fs::exists(result.best_checkpoint));
  EXPECT_TRUE(fs::exists(result.last_checkpoint));
  std::ifstream hist(result.history_csv);
  std::string header;
  std::getline(hist, header);
  EXPECT_EQ(header, kHistoryHeader);
}

TEST(Train, SameSeedIsDeterministic) {
  const auto data = fbtest::disk_dataset(8, 32, 7);
  const auto val = fbtest::disk_dataset(3, 32, 8);
  auto cfg = tiny_config(fbtest::temp_dir("det_a"), 2, 4);
  const auto a = train(cfg, data, val);
  cfg.checkpoint_dir = fbtest::temp_dir("det_b").string();
  TrainOptions two_workers;
  two_workers.num_workers = 2;
  const auto b = train(cfg, data, val, two_workers);
  EXPECT_NEAR(a.history.epochs.back().val_dsc, b.history.epochs.back().val_dsc, 1e-6);
  EXPECT_EQ(a.history.step_losses, b.history.step_losses);
}

TEST(Train, NonFiniteLossAbortsWithDiagnostic) {
  auto data = fbtest::disk_dataset(4, 32, 9);
  data[0].sample.image.pixels(3, 3) = std::numeric_limits<float>::quiet_NaN();
  auto cfg = tiny_config(fbtest::temp_dir("nan"), 1, 4);
  cfg.augment = AugmentConfig::disabled();
  try {
    train(cfg, data, {});
    FAIL();
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos);
    EXPECT_NE(msg.find("batch 1"), std::string::npos);
    EXPECT_NE(msg.find("learning rate"), std::string::npos);
  }
}

TEST(Train, WithoutValidationBestEqualsLast) {
  const auto dir = fbtest::temp_dir("noval");
  const auto result = train(tiny_config(dir, 1, 4), fbtest::disk_dataset(4, 32, 10), {});
  const auto best = load_checkpoint<float>(result.best_checkpoint);
  const auto last = load_checkpoint<float>(result.last_checkpoint);
  EXPECT_EQ(best.meta.epoch, last.meta.epoch);
  EXPECT_EQ(best.meta.tag, "best");
}

TEST(Train, CancelFlagStopsAndKeepsCheckpoint) {
  const auto dir = fbtest::temp_dir("cancel");
  std::atomic<bool> stop{false};
  TrainOptions opt;
  opt.cancel = &stop;
  opt.on_step = [&](std::uint64_t step, double) {
    if (step == 1) stop = true;
  };
  EXPECT_THROW(train(tiny_config(dir, 3, 4), fbtest::disk_dataset(8, 32, 11), {}, opt), TrainingError);
}

TEST(Config, DefaultsAndRoundTrip) {
  const TrainConfig d;
  EXPECT_EQ(d.learning_rate, 1e-4);
  EXPECT_EQ(d.batch_size, 8);
  EXPECT_EQ(d.epochs, 300);
  EXPECT_EQ(d.loss_weights.ce, 0.4);
  EXPECT_EQ(d.loss_weights.dice, 0.6);
  EXPECT_EQ(d.model.family, ModelFamily::attention_unet);
  const auto back = train_config_from_json(to_json(d));
  EXPECT_EQ(to_json(back), to_json(d));
  EXPECT_EQ(train_config_from_json(json::object()).loss_weights.dice, 0.6);
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  try {
    train_config_from_json(json{{"learning_rte", 1e-3}});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rte"), std::string::npos);
  }
  EXPECT_THROW(train_config_from_json(json{{"learning_rate", -1.0}}), ValidationError);
  EXPECT_THROW(train_config_from_json(json{{"augment", {{"noise", {{"p", 2.0}}}}}}), ValidationError);
  EXPECT_THROW(train_config_from_json(json{{"model", {{"family", "vnet"}}}}), ValidationError);
}

TEST(Checkpoint, RoundTripRebuildsArchitecture) {
  const auto dir = fbtest::temp_dir("ckpt");
  for (auto family : {ModelFamily::unet, ModelFamily::attention_unet, ModelFamily::dynamic_unet}) {
    auto model = build_model<float>(fbtest::small_spec(family, 64), 12);
    const auto path = (dir / (std::string(to_string(family)) + ".ckpt")).string();
    save_checkpoint(model, {3, 42, 0.9, "best"}, path);
    const auto loaded = load_checkpoint<float>(path);
    EXPECT_EQ(loaded.model.spec(), model.spec());
    EXPECT_EQ(loaded.meta.step, 42u);
    nn::Tensor<float> x(1, 1, 64, 64);
    for (std::size_t i = 0; i < x.values().size(); ++i) x.values()[i] = std::sin(0.01f * static_cast<float>(i));
    EXPECT_EQ(loaded.model.predict(x).values(), model.predict(x).values());
  }
}

TEST(Checkpoint, CorruptFilesAreLoadErrors) {
  const auto dir = fbtest::temp_dir("ckpt_bad");
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint<float>((dir / "junk.ckpt").string()), LoadError);
  EXPECT_THROW(load_checkpoint<float>((dir / "missing.ckpt").string()), IoError);
  auto model = build_model<float>(fbtest::small_spec(), 1);
  const auto path = (dir / "trunc.ckpt").string();
  save_checkpoint(model, {}, path);
  fs::resize_file(path, fs::file_size(path) - 100);
  EXPECT_THROW(load_checkpoint<float>(path), LoadError);
}
