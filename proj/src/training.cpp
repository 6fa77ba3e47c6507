#include "ddcm/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ddcm/inference.hpp"
#include "ddcm/loss.hpp"
#include "ddcm/parallel.hpp"

namespace ddcm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

Scores validate(Network<float>& net, const std::vector<Sample>& tiles, const Config& cfg) {
  ConfusionMatrix cm(cfg.classes);
  InferOptions opt;
  opt.tta = cfg.tta;
  opt.prob_space = cfg.tta_space == "prob";
  for (const auto& tile : tiles) {
    Prediction p = predict_image(net, tile.image, cfg.window, cfg.window_stride, opt);
    cm.accumulate(p.classes, tile.label);
  }
  return compute_scores(cm, cfg.eval_exclude);
}

TrainResult train(Network<float>& net, AdamAmsgrad<float>& opt, const Dataset& data, const Config& cfg,
                  TrainState& state, const std::filesystem::path& nan_dump, bool verbose) {
  if (data.train.empty()) throw ConfigError("train: empty training split");
  if (data.class_count > cfg.classes)
    throw ConfigError("train: dataset has " + std::to_string(data.class_count) +
                      " classes but the network only " + std::to_string(cfg.classes));

  const VecX<double> weights = [&] {
    VecX<double> f = VecX<double>::Zero(cfg.classes);
    f.head(data.train_frequencies.size()) = data.train_frequencies;
    return mfb_weights(f);
  }();

  std::vector<TensorShape> tile_shapes;
  for (const auto& t : data.train) tile_shapes.push_back(t.image.shape());

  auto params = net.params();
  const LrSchedule schedule = cfg.lr_schedule();
  const AugmentConfig aug_cfg = cfg.augment_config();
  const Index patch = cfg.patch;

  TrainResult result;
  const Clock::time_point run_start = Clock::now();

  for (Index epoch = state.next_epoch; epoch < cfg.epochs; ++epoch) {
    const Clock::time_point t0 = Clock::now();
    const auto plans = sample_patches(tile_shapes, patch, cfg.patches_per_epoch, cfg.train_seed, epoch);

    double loss_sum = 0.0;
    Index batches = 0;
    double last_lr = 0.0;

    for (size_t start = 0; start < plans.size(); start += static_cast<size_t>(cfg.batch)) {
      const Index bs = std::min<Index>(cfg.batch, static_cast<Index>(plans.size() - start));
      Tensor<float> images(bs, 3, patch, patch);
      LabelMap labels(bs, patch, patch);
      // Per-sample RNG streams keyed by (seed, epoch, sample index): the
      // batch content never depends on worker count.
      parallel_for(bs, [&](Index b) {
        const size_t idx = start + static_cast<size_t>(b);
        const PatchPlan& plan = plans[idx];
        Sample s = crop(data.train[static_cast<size_t>(plan.tile)], plan, patch);
        Rng rng = Rng::keyed(cfg.train_seed, 0x617567ULL, static_cast<std::uint64_t>(epoch),
                             static_cast<std::uint64_t>(idx));
        s = augment(s, aug_cfg, rng);
        for (Index c = 0; c < 3; ++c)
          std::copy(s.image.data() + s.image.offset(0, c, 0, 0),
                    s.image.data() + s.image.offset(0, c, 0, 0) + patch * patch,
                    images.data() + images.offset(b, c, 0, 0));
        std::copy(s.label.v.begin(), s.label.v.end(),
                  labels.v.begin() + static_cast<std::ptrdiff_t>(b * patch * patch));
      });

      Tensor<float> logits = net.forward(images, Mode::train);
      CeResult<float> ce = weighted_ce_loss(logits, labels, weights);
      if (!std::isfinite(ce.loss)) {
        if (!nan_dump.empty()) {
          TensorFile extra;
          extra.add_text("__train_state__", "epoch=" + std::to_string(epoch) +
                                                " iter=" + std::to_string(state.iter));
          save_checkpoint(net, nan_dump, render_config(cfg), &extra);
        }
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", iter " +
                           std::to_string(state.iter) +
                           (nan_dump.empty() ? "" : "; state dumped to " + nan_dump.string()));
      }
      net.backward(ce.grad_logits);

      const Index counter = schedule.kind == LrSchedule::Kind::poly ? static_cast<Index>(state.iter)
                                                                    : epoch;
      last_lr = cfg.lr * lr_at(schedule, counter);
      opt.step(params, last_lr);
      ++state.iter;
      loss_sum += ce.loss;
      ++batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.iter = state.iter;
    log.lr = last_lr;
    log.loss = loss_sum / static_cast<double>(batches);
    const bool val_now =
        !data.val.empty() && ((epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.epochs);
    if (val_now) {
      Scores s = validate(net, data.val, cfg);
      log.val_miou = s.mean_iou;
      log.val_mf1 = s.mean_f1;
    }
    log.wall_seconds = seconds_since(run_start);
    if (verbose) {
      std::printf("epoch %3lld  loss %.5f  lr %.3e  val_mIoU %.4f  (%.1fs)\n",
                  static_cast<long long>(epoch), log.loss, log.lr, log.val_miou,
                  seconds_since(t0));
      std::fflush(stdout);
    }
    result.log.push_back(log);
    state.next_epoch = epoch + 1;
  }
  return result;
}

std::string metrics_csv_header() { return "epoch,iter,lr,loss,val_mIoU,val_mF1,wall_seconds\n"; }

std::string metrics_csv_row(const EpochLog& e) {
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%lld,%lld,%.10g,%.10g,%.10g,%.10g,%.3f\n",
                static_cast<long long>(e.epoch), static_cast<long long>(e.iter), e.lr, e.loss,
                e.val_miou, e.val_mf1, e.wall_seconds);
  return buf;
}

}  // namespace ddcm
