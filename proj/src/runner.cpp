#include "fsi2p/runner.hpp"

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace fsi2p {

namespace {

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<Index> permutation(Index n, Rng& rng) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  for (Index i = n - 1; i > 0; --i) {
    const Index j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

ForwardOptions train_options(const RunConfig& c) {
  return c.fixed_depth >= 0 ? ForwardOptions{DepthMode::fixed, c.fixed_depth}
                            : ForwardOptions{DepthMode::sampled, 0};
}

ForwardOptions eval_options(const RunConfig& c) {
  return c.fixed_depth >= 0 ? ForwardOptions{DepthMode::fixed, c.fixed_depth}
                            : ForwardOptions{DepthMode::greedy, 0};
}

void check_finite(double v, Index step, const char* term) {
  if (!std::isfinite(v)) {
    throw NumericalError("training step " + std::to_string(step) + ": " + term + " is not finite");
  }
}

}  // namespace

void run_gen_data(const RunConfig& config) {
  config.validate();
  gen_dataset(config.scene_spec(), config.count, config.seed, config.dataset);
}

TrainResult train_on(const RunConfig& config, const std::vector<SyntheticSample>& samples) {
  if (samples.empty()) throw ConfigError("training set is empty");
  const Model model(config);
  TrainResult result;
  result.params = model.init(config.seed);
  const std::filesystem::path out_dir = config.out;
  ensure_dir(out_dir);
  result.csv = out_dir / "train.csv";
  result.checkpoint = out_dir / "checkpoint.bin";

  std::vector<SampleInputs> inputs;
  inputs.reserve(samples.size());
  for (const auto& s : samples) inputs.push_back(prepare_sample(model, s));

  const CircleLossParams loss_params{config.zeta, config.delta_p, config.delta_n};
  const ForwardOptions options = train_options(config);
  Rng data_rng = Rng::stream(config.seed, "data");
  Rng policy_rng = Rng::stream(config.seed, "policy");
  std::map<std::string, Eigen::VectorXd> velocity;
  double baseline = 0.0;
  bool have_baseline = false;

  std::ofstream csv = open_out(result.csv);
  csv << kTrainCsvHeader << "\n";
  auto save = [&](Index step) {
    std::map<std::string, Tensor> mom;
    for (const auto& [name, v] : velocity) {
      Shape shape;
      visit_params(result.params, [&](const std::string& n, const Tensor& t) {
        if (n == name) shape = t.shape();
      });
      mom.emplace(name, Tensor(shape, v));
    }
    save_checkpoint(result.checkpoint,
                    make_checkpoint(result.params, mom, baseline, static_cast<std::uint64_t>(step)),
                    config);
  };

  std::vector<Index> order;
  const Index n = static_cast<Index>(samples.size());
  for (Index step = 0; step < config.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    if (step % n == 0) order = permutation(n, data_rng);
    const SampleInputs& in = inputs[static_cast<std::size_t>(order[static_cast<std::size_t>(step % n)])];

    Tape tape;
    ModelParams bound = result.params;
    std::vector<std::pair<std::string, Tensor>> vars;
    visit_params(bound, [&](const std::string& name, Tensor& t) {
      t = tape.variable(t);
      vars.emplace_back(name, t);
    });
    ForwardOutput out;
    try {
      out = forward(model, bound, in, options, policy_rng);
    } catch (const NumericalError& e) {
      throw NumericalError("training step " + std::to_string(step) + ": forward pass is not finite (" +
                           e.what() + ")");
    }
    const Tensor lc = coarse_loss(out, in, loss_params);
    const Tensor lf = fine_loss(bound, in, loss_params);
    check_finite(lc.item(), step, "loss_coarse");
    check_finite(lf.item(), step, "loss_fine");
    const double reward = compute_reward(lc.item(), config.reward_delta);
    check_finite(reward, step, "reward");
    if (!have_baseline) {
      baseline = reward;
      have_baseline = true;
    }
    const Tensor lr = out.decisions.empty() ? Tensor::scalar(0.0)
                                            : reinforce_loss(out.decisions, reward, baseline);
    check_finite(lr.item(), step, "loss_rl");
    const Tensor total = total_loss(lc, lf, lr, config.xi1, config.xi2);
    const GradTable grads = tape.backward(total);

    double norm2 = 0.0;
    for (const auto& [name, var] : vars) {
      if (const auto g = grads.get(var)) norm2 += g->data().squaredNorm();
    }
    check_finite(norm2, step, "gradient norm");
    const double clip = config.grad_clip > 0 && std::sqrt(norm2) > config.grad_clip
                            ? config.grad_clip / std::sqrt(norm2)
                            : 1.0;
    std::size_t k = 0;
    visit_params(result.params, [&](const std::string& name, Tensor& t) {
      const auto g = grads.get(vars[k++].second);
      if (!g) return;
      auto [it, fresh] = velocity.try_emplace(name, Eigen::VectorXd::Zero(t.size()));
      it->second = config.momentum * it->second + clip * g->data();
      const double rate = is_policy_param(name) ? config.policy_lr : config.lr;
      t = Tensor(t.shape(), t.data() - rate * it->second);
    });
    const double b_used = baseline;
    baseline = update_baseline(baseline, reward, config.baseline_momentum);

    TrainRow row;
    row.step = step;
    row.loss_coarse = lc.item();
    row.loss_fine = lf.item();
    row.loss_rl = lr.item();
    row.reward = reward;
    row.baseline = b_used;
    row.depths = out.depths;
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    csv << row.step << ',' << fmt(row.loss_coarse) << ',' << fmt(row.loss_fine) << ','
        << fmt(row.loss_rl) << ',' << fmt(row.reward) << ',' << fmt(row.baseline) << ','
        << row.depths[0] << ',' << row.depths[1] << ',' << row.depths[2] << ','
        << fmt(row.wall_ms) << "\n";
    result.rows.push_back(row);
    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) save(step + 1);
  }
  result.baseline = baseline;
  save(config.steps);
  return result;
}

TrainResult run_train(const RunConfig& config) {
  config.validate();
  return train_on(config, load_split(config.dataset, "train"));
}

std::string EvalReport::summary() const {
  std::ostringstream s;
  s << "samples: " << samples.size() << "\n"
    << "inlier_ratio: " << fmt(inlier_ratio) << "\n"
    << "feature_match_recall: " << fmt(feature_match_recall) << "\n"
    << "registration_recall: " << fmt(registration_recall) << "\n"
    << "mean_mmd: " << fmt(mean_mmd) << "\n"
    << "depth_histogram:";
  for (Index c : depth_histogram) s << ' ' << c;
  s << "\n";
  return s.str();
}

EvalReport evaluate(const RunConfig& config, const ModelParams& params,
                    const std::vector<SyntheticSample>& samples) {
  if (samples.empty()) throw ConfigError("evaluation set is empty");
  const Model model(config);
  const ForwardOptions options = eval_options(config);
  EvalReport report;
  std::vector<double> irs;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SyntheticSample& s = samples[i];
    const SampleInputs in = prepare_sample(model, s);
    Rng rng = Rng::stream(config.seed + i, "ransac");
    const Prediction pred = predict(model, params, s, in, options, rng);
    SampleEval e;
    e.sample = static_cast<Index>(i);
    e.metrics = compute_metrics(pred.fine, s.pixel_owner, s.points, s.pose, pred.pose);
    e.fine_matches = static_cast<Index>(pred.fine.size());
    e.depths = pred.depths;
    Rng frng(0);
    const ForwardOutput out = forward(model, params, in, options, frng);
    e.mmd = mmd_rbf(normalize_rows(out.unified.to_matrix()), normalize_rows(out.points[0].to_matrix()),
                    config.mmd_bandwidth);
    for (int d : e.depths) ++report.depth_histogram[static_cast<std::size_t>(d)];
    irs.push_back(e.metrics.inlier_ratio);
    report.inlier_ratio += e.metrics.inlier_ratio;
    report.registration_recall += e.metrics.registered ? 1.0 : 0.0;
    report.mean_mmd += e.mmd;
    report.samples.push_back(e);
  }
  const double n = double(samples.size());
  report.inlier_ratio /= n;
  report.registration_recall /= n;
  report.mean_mmd /= n;
  report.feature_match_recall = feature_match_recall(irs);
  return report;
}

EvalReport run_eval(const RunConfig& config, const std::filesystem::path& checkpoint) {
  config.validate();
  const Model model(config);
  ModelParams params = model.init(config.seed);
  assign_params(params, load_checkpoint(checkpoint));
  const EvalReport report = evaluate(config, params, load_split(config.dataset, config.eval_split));
  const std::filesystem::path out_dir = config.out;
  ensure_dir(out_dir);
  std::ofstream csv = open_out(out_dir / "eval.csv");
  csv << kEvalCsvHeader << "\n";
  for (const SampleEval& e : report.samples) {
    csv << e.sample << ',' << fmt(e.metrics.inlier_ratio) << ',' << e.fine_matches << ','
        << int(e.metrics.feature_match) << ',' << int(e.metrics.registered) << ','
        << fmt(e.metrics.rmse) << ',' << fmt(e.metrics.rotation_error_deg) << ','
        << fmt(e.metrics.translation_error) << ',' << e.depths[0] << ',' << e.depths[1] << ','
        << e.depths[2] << ',' << fmt(e.mmd) << "\n";
  }
  open_out(out_dir / "eval_summary.txt") << report.summary();
  return report;
}

double loglog_slope(const std::vector<double>& tokens, const std::vector<double>& seconds) {
  if (tokens.size() != seconds.size() || tokens.size() < 2) {
    throw DomainError("loglog_slope: need at least two paired measurements");
  }
  const Index n = static_cast<Index>(tokens.size());
  Eigen::VectorXd x(n), y(n);
  for (Index i = 0; i < n; ++i) {
    if (!(tokens[static_cast<std::size_t>(i)] > 0 && seconds[static_cast<std::size_t>(i)] > 0)) {
      throw DomainError("loglog_slope: non-positive measurement");
    }
    x[i] = std::log(tokens[static_cast<std::size_t>(i)]);
    y[i] = std::log(seconds[static_cast<std::size_t>(i)]);
  }
  const double mx = x.mean(), my = y.mean();
  return ((x.array() - mx) * (y.array() - my)).sum() / (x.array() - mx).square().sum();
}

std::vector<double> attention_drift(const Model& model, const ModelParams& p,
                                    const SampleInputs& in, int max_depth, double bandwidth) {
  const Tensor fi = add(add(matmul(in.coarse_image, p.image_in_w), p.image_in_b),
                        matmul(model.image_positions, p.image_pos_w));
  const Tensor fp = add(add(matmul(in.point_features, p.point_in_w), p.point_in_b),
                        matmul(in.point_positions, p.point_pos_w));
  std::vector<double> out;
  AttentionOutput cur{fi, fp};
  for (int d = 1; d <= max_depth; ++d) {
    cur = attention_block(cur.image, cur.points, p.attention);
    out.push_back(mmd_rbf(normalize_rows(cur.image.to_matrix()), normalize_rows(cur.points.to_matrix()),
                          bandwidth));
  }
  return out;
}

namespace {

template <typename F>
double time_min(Index repeats, F&& f) {
  double best = std::numeric_limits<double>::infinity();
  for (Index r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

Tensor random_tokens(Index rows, Index cols, Rng& rng) {
  Eigen::VectorXd v(rows * cols);
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  return Tensor({rows, cols}, v);
}

}  // namespace

BenchReport run_bench(const RunConfig& config,
                      const std::optional<std::filesystem::path>& checkpoint) {
  config.validate();
  BenchReport r;
  const Index c = config.channels, n = config.bench_points;
  Rng rng = Rng::stream(config.seed, "init");
  const std::array<std::pair<Index, Index>, 5> grids = {
      {{16, 16}, {16, 32}, {32, 32}, {32, 64}, {64, 64}}};
  const Index window = 8;
  SweepParams sweep_params;
  sweep_params.ssm = init_ssm_layer(c, config.state_dim, rng);
  sweep_params.ssm.out_w = random_tokens(c, c, rng);
  const AttentionParams attention = init_attention(c, config.heads, rng, false);
  const Tensor points = random_tokens(n, c, rng);
  for (const auto& [h, w] : grids) {
    const Index tokens = h * w;
    const SweepLayout layout = make_layout(h, w, window, n, Ordering::raster);
    sweep_params.lambda_raw = Tensor::zeros({layout.stream_count()});
    const Tensor image = random_tokens(tokens, c, rng);
    const Tensor h0 = zero_state(sweep_params.ssm.scan);
    r.tokens.push_back(double(tokens));
    r.sweep_seconds.push_back(time_min(config.bench_repeats, [&] {
      (void)sweep(image, points, layout, sweep_params, h0);
    }));
    r.attention_seconds.push_back(time_min(config.bench_repeats, [&] {
      (void)attention_block(image, points, attention);
    }));
  }
  r.sweep_slope = loglog_slope(r.tokens, r.sweep_seconds);
  r.attention_slope = loglog_slope(r.tokens, r.attention_seconds);
  std::vector<double> linear, quadratic;
  for (double t : r.tokens) {
    linear.push_back(3e-7 * t);
    quadratic.push_back(2e-9 * t * t);
  }
  r.linear_stub_slope = loglog_slope(r.tokens, linear);
  r.quadratic_stub_slope = loglog_slope(r.tokens, quadratic);

  RunConfig probe_cfg = config;
  probe_cfg.points = std::max<Index>(config.points, 6);
  const Model model(probe_cfg);
  ModelParams params = model.init(config.seed);
  if (checkpoint) {
    assign_params(params, load_checkpoint(*checkpoint));
  } else {
    Rng arng = Rng::stream(config.seed, "init");
    params.attention = init_attention(c, config.heads, arng, false);
  }
  const SyntheticSample probe = gen_scene(probe_cfg.scene_spec(), config.seed);
  r.mmd_by_depth = attention_drift(model, params, prepare_sample(model, probe), 6, config.mmd_bandwidth);

  const std::filesystem::path out_dir = config.out;
  ensure_dir(out_dir);
  std::ofstream csv = open_out(out_dir / "bench_scaling.csv");
  csv << "kernel,tokens,seconds\n";
  for (std::size_t i = 0; i < r.tokens.size(); ++i) {
    csv << "sweep," << r.tokens[i] << ',' << fmt(r.sweep_seconds[i]) << "\n";
    csv << "attention," << r.tokens[i] << ',' << fmt(r.attention_seconds[i]) << "\n";
  }
  csv << "slope_sweep,," << fmt(r.sweep_slope) << "\n";
  csv << "slope_attention,," << fmt(r.attention_slope) << "\n";
  csv << "slope_linear_stub,," << fmt(r.linear_stub_slope) << "\n";
  csv << "slope_quadratic_stub,," << fmt(r.quadratic_stub_slope) << "\n";
  std::ofstream mmd = open_out(out_dir / "bench_mmd.csv");
  mmd << "attention_depth,mmd\n";
  for (std::size_t d = 0; d < r.mmd_by_depth.size(); ++d) mmd << d + 1 << ',' << fmt(r.mmd_by_depth[d]) << "\n";
  return r;
}

}  // namespace fsi2p
