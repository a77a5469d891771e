#include "partscope/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "partscope/checkpoint_io.hpp"
#include "partscope/errors.hpp"

namespace partscope {

namespace {

constexpr std::uint64_t kSaltInit = 0x5EED0001ull;
constexpr std::uint64_t kSaltOrder = 0x5EED0002ull;
constexpr std::uint64_t kSaltTransform = 0x5EED0003ull;
constexpr std::uint64_t kSaltTargets = 0x5EED0004ull;

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kMomentum = 0.9;

Optimizer optimizer_from_string(const std::string& s) {
  if (s == "sgd") return Optimizer::Sgd;
  if (s == "sgd-momentum") return Optimizer::SgdMomentum;
  if (s == "adaptive-moments") return Optimizer::AdaptiveMoments;
  throw ConfigError("unknown optimizer `" + s + "`");
}

ProviderKind provider_from_string(const std::string& s) {
  if (s == "raw-color") return ProviderKind::RawColor;
  if (s == "toy-cnn") return ProviderKind::ToyCnn;
  if (s == "precomputed") return ProviderKind::PrecomputedFile;
  if (s == "external-pretrained") return ProviderKind::ExternalPretrained;
  throw ConfigError("unknown provider `" + s + "`");
}

}  // namespace

TrainConfig train_config_from_config(KeyValueConfig& cfg) {
  TrainConfig out;
  out.k_parts = static_cast<int>(cfg.get_int("k", out.k_parts));
  out.steps = static_cast<int>(cfg.get_int("steps", out.steps));
  out.batch_size = static_cast<int>(cfg.get_int("batch_size", out.batch_size));
  out.lr = cfg.get_double("lr", out.lr);
  out.optimizer = optimizer_from_string(cfg.get_string("optimizer", "adaptive-moments"));
  out.weights.lambda_f = cfg.get_double("lambda_f", out.weights.lambda_f);
  out.weights.lambda_c = cfg.get_double("lambda_c", out.weights.lambda_c);
  out.weights.lambda_v = cfg.get_double("lambda_v", out.weights.lambda_v);
  out.weights.lambda_e = cfg.get_double("lambda_e", out.weights.lambda_e);
  out.weights.tau = cfg.get_double("tau", out.weights.tau);
  out.use_l2_instead_of_contrastive =
      cfg.get_bool("use_l2_instead_of_contrastive", out.use_l2_instead_of_contrastive);
  out.contrastive_same_image_views =
      cfg.get_bool("contrastive_same_image_views", out.contrastive_same_image_views);
  out.contrastive_same_image_negatives =
      cfg.get_bool("contrastive_same_image_negatives", out.contrastive_same_image_negatives);
  out.normalize_descriptors = cfg.get_bool("normalize_descriptors", out.normalize_descriptors);
  out.aug.theta_max_deg = cfg.get_double("aug_theta_max_deg", out.aug.theta_max_deg);
  out.aug.scale_min = cfg.get_double("aug_scale_min", out.aug.scale_min);
  out.aug.scale_max = cfg.get_double("aug_scale_max", out.aug.scale_max);
  out.aug.translate_max = cfg.get_double("aug_translate_max", out.aug.translate_max);
  out.aug.brightness_jitter = cfg.get_double("aug_brightness", out.aug.brightness_jitter);
  out.aug.contrast_jitter = cfg.get_double("aug_contrast", out.aug.contrast_jitter);
  out.aug.saturation_jitter = cfg.get_double("aug_saturation", out.aug.saturation_jitter);
  out.provider.kind = provider_from_string(cfg.get_string("provider", "toy-cnn"));
  out.provider.layer_names = cfg.get_list("provider_layers", {});
  out.provider.seed = static_cast<std::uint64_t>(
      cfg.get_int("provider_seed", static_cast<std::int64_t>(out.provider.seed)));
  out.provider.directory = cfg.get_string("provider_dir", "");
  out.provider.external_name = cfg.get_string("provider_external", "");
  out.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<std::int64_t>(out.seed)));
  out.checkpoint_interval =
      static_cast<int>(cfg.get_int("checkpoint_interval", out.checkpoint_interval));
  validate_train_config(out);
  return out;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  KeyValueConfig cfg = KeyValueConfig::from_file(path);
  TrainConfig out = train_config_from_config(cfg);
  cfg.finish();
  return out;
}

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.k_parts < 2) throw ConfigError("k: the segmenter needs at least 2 parts");
  if (cfg.steps < 1) throw ConfigError("steps: must be >= 1");
  if (cfg.lr <= 0.0) throw ConfigError("lr: must be positive");
  if (cfg.batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (cfg.weights.lambda_c > 0.0 && cfg.batch_size < 2)
    throw ConfigError("batch_size: the contrastive loss (lambda_c > 0) requires batch_size >= 2");
  if (cfg.checkpoint_interval < 1) throw ConfigError("checkpoint_interval: must be >= 1");
  validate_loss_weights(cfg.weights);
  validate_ranges(cfg.aug);
}

TargetAssignment sample_targets(std::size_t n_images, std::size_t n_parts,
                                const std::vector<std::uint8_t>& valid, Rng& rng) {
  if (n_images < 2) throw std::invalid_argument("target sampling requires batch >= 2");
  if (valid.size() != n_images * n_parts)
    throw std::invalid_argument("validity size mismatch in sample_targets");
  TargetAssignment out;
  out.n_images = n_images;
  out.n_parts = n_parts;
  out.target.assign(n_images * n_parts, TargetAssignment::kSkipped);
  std::vector<int> candidates;
  for (std::size_t n = 0; n < n_images; ++n) {
    for (std::size_t k = 0; k < n_parts; ++k) {
      candidates.clear();
      for (std::size_t i = 0; i < n_images; ++i)
        if (i != n && valid[i * n_parts + k]) candidates.push_back(static_cast<int>(i));
      if (candidates.empty()) continue;  // marked skipped
      out.target[n * n_parts + k] = candidates[rng.index(candidates.size())];
    }
  }
  return out;
}

TrainerState::TrainerState(ToyUnet m) : model(std::move(m)) {
  model.for_each_param([&](const std::string&, Tensor& t) {
    slot_m.emplace_back(t.shape());
    slot_v.emplace_back(t.shape());
  });
}

TrainerState make_trainer_state(const TrainConfig& cfg) {
  ToyUnet model(cfg.k_parts);
  Rng rng(Rng::mix(cfg.seed, kSaltInit));
  model.init_parameters(rng);
  return TrainerState(std::move(model));
}

namespace {

void apply_update(TrainerState& state, ToyUnet::Grads& grads, const TrainConfig& cfg) {
  // state.step has already been advanced to the 1-based update index
  const double t = static_cast<double>(state.step);
  std::size_t slot = 0;
  std::vector<Tensor*> gptrs;
  ToyUnet::for_each_grad(grads, [&](const std::string&, Tensor& g) { gptrs.push_back(&g); });
  state.model.for_each_param([&](const std::string&, Tensor& p) {
    Tensor& g = *gptrs[slot];
    switch (cfg.optimizer) {
      case Optimizer::Sgd: {
        for (std::size_t i = 0; i < p.size(); ++i) p.data()[i] -= cfg.lr * g.data()[i];
        break;
      }
      case Optimizer::SgdMomentum: {
        Tensor& m = state.slot_m[slot];
        for (std::size_t i = 0; i < p.size(); ++i) {
          m.data()[i] = kMomentum * m.data()[i] + g.data()[i];
          p.data()[i] -= cfg.lr * m.data()[i];
        }
        break;
      }
      case Optimizer::AdaptiveMoments: {
        Tensor& m = state.slot_m[slot];
        Tensor& v = state.slot_v[slot];
        const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
        const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double gi = g.data()[i];
          m.data()[i] = kAdamBeta1 * m.data()[i] + (1.0 - kAdamBeta1) * gi;
          v.data()[i] = kAdamBeta2 * v.data()[i] + (1.0 - kAdamBeta2) * gi * gi;
          const double mh = m.data()[i] / bc1;
          const double vh = v.data()[i] / bc2;
          p.data()[i] -= cfg.lr * mh / (std::sqrt(vh) + kAdamEps);
        }
        break;
      }
    }
    ++slot;
  });
}

}  // namespace

StepResult train_step(TrainerState& state, const std::vector<TrainItem>& batch,
                      const TrainConfig& cfg, const FeatureProvider* provider) {
  StepResult result;

  std::vector<const TrainItem*> usable;
  for (const TrainItem& item : batch) {
    if (item.fg->count() == 0) {
      ++result.dropped_items;
      continue;
    }
    usable.push_back(&item);
  }
  const std::size_t min_items = cfg.weights.lambda_c > 0.0 ? 2 : 1;
  if (usable.size() < min_items)
    throw std::invalid_argument("train_step: too few usable items after dropping empty foregrounds");

  const std::size_t n = usable.size();
  const bool need_view = cfg.weights.lambda_e > 0.0 ||
                         (cfg.weights.lambda_c > 0.0 && cfg.contrastive_same_image_views);
  const bool need_view_features = cfg.weights.lambda_c > 0.0 && cfg.contrastive_same_image_views;
  if (need_view_features && provider == nullptr)
    throw std::invalid_argument("same-image-views needs the feature provider at step time");

  struct PerItem {
    TransformSpec transform;
    ToyUnet::Cache cache_a, cache_b;
    Tensor image_t;
    ForegroundMask fg_t;
    FeatureMap features_t;
  };
  std::vector<PerItem> work(n);
  std::vector<SampleInputs> inputs(n);

  for (std::size_t i = 0; i < n; ++i) {
    const TrainItem& item = *usable[i];
    PerItem& wk = work[i];
    state.model.forward(*item.image, &wk.cache_a);

    SampleInputs& in = inputs[i];
    in.image = item.image;
    in.fg = item.fg;
    in.mask = &wk.cache_a.probs;
    in.features = item.features;

    if (need_view) {
      wk.transform = sample_transform(
          cfg.aug, Rng::mix(Rng::mix(cfg.seed, kSaltTransform),
                            static_cast<std::uint64_t>(state.step) * 8192 + i));
      // T(I): geometric warp, then photometric jitter
      WarpResult warped = apply_geometric(wk.transform, *item.image, Interp::Bilinear);
      Image img_t;
      img_t.data = std::move(warped.data);
      img_t = apply_photometric(wk.transform, img_t);
      wk.image_t = std::move(img_t.data);
      state.model.forward(wk.image_t, &wk.cache_b);
      in.transform = &wk.transform;
      in.mask_transformed = &wk.cache_b.probs;

      if (need_view_features) {
        Tensor fg_real = fg_weights(*item.fg);
        Tensor fg3({1, item.fg->height, item.fg->width},
                   std::vector<double>(fg_real.data(), fg_real.data() + fg_real.size()));
        const WarpResult wfg = apply_geometric(wk.transform, fg3, Interp::Nearest);
        wk.fg_t.height = item.fg->height;
        wk.fg_t.width = item.fg->width;
        wk.fg_t.data.resize(wfg.data.size());
        for (std::size_t u = 0; u < wfg.data.size(); ++u)
          wk.fg_t.data[u] = wfg.valid[u] != 0 && wfg.data.data()[u] >= 0.5 ? 1 : 0;
        Image view;
        view.data = wk.image_t;
        wk.features_t = provider->extract(view);
        in.fg_transformed = &wk.fg_t;
        in.features_transformed = &wk.features_t;
      }
    }
  }

  // targets for the contrastive term
  TargetAssignment targets;
  targets.n_images = n;
  targets.n_parts = static_cast<std::size_t>(cfg.k_parts);
  targets.target.assign(n * targets.n_parts, TargetAssignment::kSkipped);
  if (cfg.weights.lambda_c > 0.0) {
    if (cfg.contrastive_same_image_views) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < targets.n_parts; ++k)
          targets.target[i * targets.n_parts + k] = static_cast<int>(i);
    } else {
      std::vector<std::uint8_t> valid(n * targets.n_parts, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const SampleInputs& in = inputs[i];
        const PooledMask pooled = reconcile_to_grid(*in.mask, *in.fg, in.features->height(),
                                                    in.features->width());
        const PartStats stats = part_stats(in.features->data, pooled.mask, pooled.weights);
        for (std::size_t k = 0; k < targets.n_parts; ++k)
          valid[i * targets.n_parts + k] = stats.valid[k];
      }
      Rng trng(Rng::mix(Rng::mix(cfg.seed, kSaltTargets), static_cast<std::uint64_t>(state.step)));
      targets = sample_targets(n, targets.n_parts, valid, trng);
    }
  }

  TotalLossOptions opts;
  opts.weights = cfg.weights;
  opts.normalize_descriptors = cfg.normalize_descriptors;
  opts.include_same_image_negatives = cfg.contrastive_same_image_negatives;
  opts.use_l2_instead_of_contrastive = cfg.use_l2_instead_of_contrastive;
  opts.same_image_views = cfg.weights.lambda_c > 0.0 && cfg.contrastive_same_image_views;

  std::vector<SampleGrads> grads;
  result.losses = total_loss(inputs, targets, opts, &grads);

  ToyUnet::Grads pgrads = state.model.zero_grads();
  for (std::size_t i = 0; i < n; ++i) {
    state.model.backward(work[i].cache_a, &grads[i].d_mask, nullptr, pgrads);
    if (inputs[i].mask_transformed != nullptr && grads[i].d_mask_transformed.size() > 0)
      state.model.backward(work[i].cache_b, &grads[i].d_mask_transformed, nullptr, pgrads);
  }

  ++state.step;
  apply_update(state, pgrads, cfg);
  return result;
}

void save_trainer_checkpoint(const std::filesystem::path& path, const TrainerState& state) {
  CheckpointFile file;
  file.architecture = ToyUnet::kArchitecture;
  file.k_parts = static_cast<std::uint32_t>(state.model.num_parts());
  state.model.for_each_param([&](const std::string& name, const Tensor& t) {
    file.blocks.emplace_back(name, t);
  });
  Tensor step({1});
  step(0) = static_cast<double>(state.step);
  file.blocks.emplace_back("opt.step", std::move(step));
  std::size_t slot = 0;
  state.model.for_each_param([&](const std::string& name, const Tensor&) {
    file.blocks.emplace_back("opt.m." + name, state.slot_m[slot]);
    file.blocks.emplace_back("opt.v." + name, state.slot_v[slot]);
    ++slot;
  });
  save_checkpoint_file(path, file);
}

TrainerState load_trainer_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg) {
  TrainerState state(ToyUnet::load_checkpoint(path, cfg.k_parts));
  const CheckpointFile file = load_checkpoint_file(path);
  if (const Tensor* step = file.find("opt.step")) state.step = static_cast<long long>((*step)(0));
  std::size_t slot = 0;
  state.model.for_each_param([&](const std::string& name, const Tensor&) {
    if (const Tensor* m = file.find("opt.m." + name)) state.slot_m[slot] = *m;
    if (const Tensor* v = file.find("opt.v." + name)) state.slot_v[slot] = *v;
    ++slot;
  });
  return state;
}

TrainOutput train(const TrainConfig& cfg, const data::Manifest& manifest,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::string>& class_filter,
                  const std::optional<std::filesystem::path>& resume_from,
                  const std::optional<std::filesystem::path>& saliency_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string());

  std::vector<data::Sample> samples = data::load_split(manifest, "train");
  if (class_filter.has_value()) {
    std::erase_if(samples,
                  [&](const data::Sample& s) { return s.class_name != *class_filter; });
  }
  if (samples.empty()) throw ConfigError("training split is empty");
  if (saliency_dir.has_value()) data::substitute_foregrounds(samples, *saliency_dir);

  const auto provider = make_provider(cfg.provider);
  std::vector<FeatureMap> features(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    features[i] = provider->extract(samples[i].image, samples[i].id);

  TrainerState state = resume_from.has_value() ? load_trainer_checkpoint(*resume_from, cfg)
                                               : make_trainer_state(cfg);

  TrainOutput out;
  out.loss_csv = out_dir / "losses.csv";
  out.checkpoint = out_dir / "checkpoint.pseg";

  std::ofstream csv;
  if (resume_from.has_value() && std::filesystem::exists(out.loss_csv)) {
    csv.open(out.loss_csv, std::ios::app);
  } else {
    csv.open(out.loss_csv);
    csv << "step,loss_total,loss_f,loss_c,loss_v,loss_e\n";
  }
  if (!csv) throw IoError("cannot write loss log " + out.loss_csv.string());

  const std::size_t n_samples = samples.size();
  const std::size_t batch_size = std::min<std::size_t>(
      static_cast<std::size_t>(cfg.batch_size), n_samples);
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;

  auto refill = [&]() {
    order.resize(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) order[i] = i;
    Rng rng(Rng::mix(Rng::mix(cfg.seed, kSaltOrder), epoch));
    for (std::size_t i = n_samples; i > 1; --i) {
      const std::size_t j = rng.index(i);
      std::swap(order[i - 1], order[j]);
    }
    ++epoch;
    cursor = 0;
  };
  refill();

  char row[256];
  for (int s = 0; s < cfg.steps; ++s) {
    std::vector<TrainItem> batch;
    for (std::size_t b = 0; b < batch_size; ++b) {
      if (cursor >= n_samples) refill();
      const std::size_t idx = order[cursor++];
      batch.push_back({&samples[idx].image.data, &samples[idx].fg, &features[idx]});
    }
    const StepResult res = train_step(state, batch, cfg, provider.get());
    std::snprintf(row, sizeof(row), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n", state.step,
                  res.losses.total, res.losses.f, res.losses.c, res.losses.v, res.losses.e);
    csv << row;
    if (state.step % cfg.checkpoint_interval == 0)
      save_trainer_checkpoint(out.checkpoint, state);
  }
  csv.flush();
  if (!csv) throw IoError("short write to loss log " + out.loss_csv.string());
  save_trainer_checkpoint(out.checkpoint, state);
  out.final_step = state.step;
  return out;
}

}  // namespace partscope
