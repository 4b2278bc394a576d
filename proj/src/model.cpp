#include "fsi2p/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fsi2p {

namespace {

void visit_ssm(SsmLayer& l, const std::string& p, const ParamVisitor& fn) {
  fn(p + ".a_log", l.scan.a_log);
  fn(p + ".delta_w", l.scan.delta_w);
  fn(p + ".delta_b", l.scan.delta_b);
  fn(p + ".b_w", l.scan.b_w);
  fn(p + ".c_w", l.scan.c_w);
  fn(p + ".d_skip", l.scan.d_skip);
  fn(p + ".out_w", l.out_w);
  fn(p + ".out_b", l.out_b);
}

void visit_attention(AttentionWeights& w, const std::string& p, const ParamVisitor& fn) {
  fn(p + ".wq", w.wq);
  fn(p + ".wk", w.wk);
  fn(p + ".wv", w.wv);
  fn(p + ".wo", w.wo);
}

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  Eigen::VectorXd v(shape_numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

void visit_params(ModelParams& p, const ParamVisitor& fn) {
  fn("image_in.w", p.image_in_w);
  fn("image_in.b", p.image_in_b);
  fn("point_in.w", p.point_in_w);
  fn("point_in.b", p.point_in_b);
  fn("image_pos.w", p.image_pos_w);
  fn("point_pos.w", p.point_pos_w);
  visit_attention(p.attention.self_image, "attention.self_image", fn);
  visit_attention(p.attention.self_point, "attention.self_point", fn);
  visit_attention(p.attention.cross_image, "attention.cross_image", fn);
  visit_attention(p.attention.cross_point, "attention.cross_point", fn);
  for (std::size_t k = 0; k < 3; ++k) {
    fn("pyramid.mix" + std::to_string(k) + ".w", p.pyramid.mix_w[k]);
    fn("pyramid.mix" + std::to_string(k) + ".b", p.pyramid.mix_b[k]);
  }
  const char* levels[] = {"a", "b", "c"};
  for (std::size_t k = 0; k < 3; ++k) {
    const std::string base = std::string("mlayer_") + levels[k];
    MLayerParams& m = p.mlayers[k];
    fn(base + ".modulation.w1", m.focus.modulation.w1);
    fn(base + ".modulation.b1", m.focus.modulation.b1);
    fn(base + ".modulation.w2", m.focus.modulation.w2);
    fn(base + ".modulation.b2", m.focus.modulation.b2);
    visit_ssm(m.focus.ssm, base + ".focus", fn);
    visit_ssm(m.sweep.ssm, base + ".sweep", fn);
    fn(base + ".sweep.lambda", m.sweep.lambda_raw);
  }
  fn("policy.w1", p.policy.w1);
  fn("policy.b1", p.policy.b1);
  fn("policy.w2", p.policy.w2);
  fn("policy.b2", p.policy.b2);
  fn("fine_image.w", p.fine_image_w);
  fn("fine_point.w", p.fine_point_w);
}

void visit_params(const ModelParams& params, const ConstParamVisitor& fn) {
  visit_params(const_cast<ModelParams&>(params),
               [&](const std::string& name, Tensor& t) { fn(name, t); });
}

bool is_policy_param(const std::string& name) { return name.rfind("policy.", 0) == 0; }

Model::Model(const RunConfig& cfg) : config(cfg) {
  config.validate();
  coarse_h = config.height / config.coarse_pool;
  coarse_w = config.width / config.coarse_pool;
  index = make_pyramid_index(coarse_h, coarse_w, config.height, config.width,
                             {config.window_a, config.window_b, config.window_c});
  const Index windows[] = {config.window_a, config.window_b, config.window_c};
  for (std::size_t l = 0; l < 3; ++l) {
    layouts[l] = make_layout(index.h[l], index.w[l], windows[l], config.points, config.ordering);
  }
  image_embedding = {static_cast<int>(config.embedding_levels), 2};
  point_embedding = {static_cast<int>(config.embedding_levels), 3};
  RowMatrix coords(coarse_h * coarse_w, 2);
  for (Index r = 0; r < coarse_h; ++r) {
    for (Index c = 0; c < coarse_w; ++c) {
      coords(r * coarse_w + c, 0) = 2.0 * (double(c) + 0.5) / double(coarse_w) - 1.0;
      coords(r * coarse_w + c, 1) = 2.0 * (double(r) + 0.5) / double(coarse_h) - 1.0;
    }
  }
  image_positions = Tensor::matrix(image_embedding.embed_rows(coords));
}

ModelParams Model::init(std::uint64_t seed) const {
  Rng rng = Rng::stream(seed, "init");
  const Index cin = config.input_channels, c = config.channels;
  ModelParams p;
  p.image_in_w = gaussian({cin, c}, double(config.coarse_pool) / std::sqrt(double(cin)), rng);
  p.image_in_b = Tensor::zeros({c});
  p.point_in_w = gaussian({cin, c}, 1.0 / std::sqrt(double(cin)), rng);
  p.point_in_b = Tensor::zeros({c});
  p.image_pos_w = Tensor::zeros({image_embedding.output_dim(), c});
  p.point_pos_w = Tensor::zeros({point_embedding.output_dim(), c});
  p.attention = init_attention(c, config.heads, rng);
  p.pyramid = init_pyramid(c);
  for (std::size_t l = 0; l < 3; ++l) {
    p.mlayers[l] = init_mlayer(c, config.state_dim, config.modulation_hidden,
                               layouts[l].stream_count(), rng);
  }
  p.policy = init_policy(c, config.policy_hidden, rng);
  p.fine_image_w = gaussian({cin, config.fine_channels}, 1.0 / std::sqrt(double(cin)), rng);
  p.fine_point_w = gaussian({cin, config.fine_channels}, 1.0 / std::sqrt(double(cin)), rng);
  return p;
}

SampleInputs prepare_sample(const Model& model, const SyntheticSample& s) {
  const RunConfig& cfg = model.config;
  if (s.h != cfg.height || s.w != cfg.width || s.channels != cfg.input_channels ||
      s.point_count() != cfg.points) {
    throw ShapeError("sample of " + std::to_string(s.h) + "x" + std::to_string(s.w) + "x" +
                     std::to_string(s.channels) + " with " + std::to_string(s.point_count()) +
                     " points does not fit the configured model");
  }
  SampleInputs in;
  const Index pool = cfg.coarse_pool, ch = model.coarse_h, cw = model.coarse_w;
  RowMatrix coarse = RowMatrix::Zero(ch * cw, s.channels);
  for (Index p = 0; p < s.h * s.w; ++p) {
    const Index r = (p / s.w) / pool, c = (p % s.w) / pool;
    coarse.row(r * cw + c) += s.image_features.row(p);
  }
  coarse /= double(pool * pool);
  in.coarse_image = Tensor::matrix(coarse);
  in.point_features = Tensor::matrix(s.point_features);

  const Eigen::RowVector3d lo = s.points.colwise().minCoeff(), hi = s.points.colwise().maxCoeff();
  const Eigen::RowVector3d centre = 0.5 * (lo + hi);
  const Eigen::RowVector3d half = (0.5 * (hi - lo)).cwiseMax(1e-9);
  RowMatrix coords(s.point_count(), 3);
  for (Index j = 0; j < s.point_count(); ++j) {
    coords.row(j) = (s.points.row(j) - centre).cwiseQuotient(half);
  }
  in.point_positions = Tensor::matrix(model.point_embedding.embed_rows(coords));

  const OverlapTable ov = gt_overlap(s, model.index, cfg.radius);
  in.coarse_labels.label = LabelMatrix::Zero(ov.overlap_2d.rows(), ov.overlap_2d.cols());
  in.coarse_labels.lambda_p = RowMatrix::Zero(ov.overlap_2d.rows(), ov.overlap_2d.cols());
  for (Index i = 0; i < ov.overlap_2d.rows(); ++i) {
    for (Index j = 0; j < ov.overlap_2d.cols(); ++j) {
      const CoarseLabel l = label_coarse(ov.overlap_2d(i, j), ov.overlap_3d(i, j));
      in.coarse_labels.label(i, j) = static_cast<std::int8_t>(l.label);
      in.coarse_labels.lambda_p(i, j) = l.lambda_p;
    }
  }

  // Fine supervision: an 8x8 window around each point's ground-truth pixel.
  constexpr Index kHalfLo = 3, kHalfHi = 4;
  const Index n = s.point_count();
  std::vector<std::vector<Index>> windows(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    const Index pix = s.point_pixel[static_cast<std::size_t>(j)];
    const Index r0 = pix / s.w, c0 = pix % s.w;
    for (Index r = std::max<Index>(0, r0 - kHalfLo); r <= std::min(s.h - 1, r0 + kHalfHi); ++r)
      for (Index c = std::max<Index>(0, c0 - kHalfLo); c <= std::min(s.w - 1, c0 + kHalfHi); ++c)
        windows[static_cast<std::size_t>(j)].push_back(r * s.w + c);
    const auto& w = windows[static_cast<std::size_t>(j)];
    in.fine_pixels.insert(in.fine_pixels.end(), w.begin(), w.end());
  }
  std::sort(in.fine_pixels.begin(), in.fine_pixels.end());
  in.fine_pixels.erase(std::unique(in.fine_pixels.begin(), in.fine_pixels.end()), in.fine_pixels.end());
  const Index m = static_cast<Index>(in.fine_pixels.size());
  RowMatrix fine(m, s.channels);
  for (Index k = 0; k < m; ++k) fine.row(k) = s.image_features.row(in.fine_pixels[static_cast<std::size_t>(k)]);
  in.fine_image = Tensor::matrix(fine);

  auto label_pair = [&](Index j, Index pixel) {
    const Index owner = s.pixel_owner[static_cast<std::size_t>(pixel)];
    const double d3 = owner < 0 ? std::numeric_limits<double>::infinity()
                                : (s.points.row(j) - s.points.row(owner)).norm();
    const double d2 = std::hypot(s.projections(j, 0) - double(pixel % s.w),
                                 s.projections(j, 1) - double(pixel / s.w));
    return static_cast<std::int8_t>(label_fine(d3, d2));
  };
  in.fine_point_labels.label = LabelMatrix::Zero(n, m);
  for (Index j = 0; j < n; ++j) {
    for (Index pixel : windows[static_cast<std::size_t>(j)]) {
      const auto k = std::lower_bound(in.fine_pixels.begin(), in.fine_pixels.end(), pixel) -
                     in.fine_pixels.begin();
      in.fine_point_labels.label(j, k) = label_pair(j, pixel);
    }
  }
  in.fine_pixel_labels.label = LabelMatrix::Zero(m, n);
  for (Index k = 0; k < m; ++k) {
    const Index pixel = in.fine_pixels[static_cast<std::size_t>(k)];
    if (s.pixel_owner[static_cast<std::size_t>(pixel)] < 0) continue;
    for (Index j = 0; j < n; ++j) in.fine_pixel_labels.label(k, j) = label_pair(j, pixel);
  }
  return in;
}

ForwardOutput forward(const Model& model, const ModelParams& p, const SampleInputs& in,
                      const ForwardOptions& options, Rng& rng) {
  ForwardOutput out;
  const Tensor fi = add(add(matmul(in.coarse_image, p.image_in_w), p.image_in_b),
                        matmul(model.image_positions, p.image_pos_w));
  const Tensor fp = add(add(matmul(in.point_features, p.point_in_w), p.point_in_b),
                        matmul(in.point_positions, p.point_pos_w));
  const AttentionOutput att = attention_block(fi, fp, p.attention);
  out.image_tokens = att.image;
  out.attended_points = att.points;
  const auto levels = build_pyramid({att.image, model.coarse_h, model.coarse_w}, p.pyramid);
  std::array<Tensor, 3> refined;
  for (std::size_t l = 0; l < 3; ++l) {
    int depth = options.fixed_depth;
    if (options.mode != DepthMode::fixed) {
      const Tensor log_pi = log_softmax(policy_logits(build_state(levels[l].tokens, att.points), p.policy), 0);
      const DecisionMode mode =
          options.mode == DepthMode::sampled ? DecisionMode::sampled : DecisionMode::greedy;
      out.decisions.push_back(select_action(log_pi, mode, rng, static_cast<int>(l)));
      depth = out.decisions.back().action;
    }
    out.depths[l] = depth;
    const MLayerOutput m = mlayer_stack(levels[l].tokens, att.points, model.layouts[l], p.mlayers[l],
                                        depth, zero_carry(p.mlayers[l]));
    refined[l] = m.image;
    out.points[l] = m.points;
  }
  out.unified = concat(refined, 0);
  return out;
}

Tensor coarse_loss(const ForwardOutput& out, const SampleInputs& in, const CircleLossParams& params) {
  const Tensor image = l2_normalize_rows(out.unified);
  Tensor total = Tensor::scalar(0.0);
  for (const Tensor& pts : out.points) {
    total = add(total, circle_loss_symmetric(feature_distance(image, l2_normalize_rows(pts)),
                                             in.coarse_labels, params));
  }
  return scale(total, 1.0 / 3.0);
}

Tensor fine_loss(const ModelParams& p, const SampleInputs& in, const CircleLossParams& params) {
  const Tensor pts = l2_normalize_rows(matmul(in.point_features, p.fine_point_w));
  const Tensor pix = l2_normalize_rows(matmul(in.fine_image, p.fine_image_w));
  const Tensor d = feature_distance(pts, pix);
  return scale(add(circle_loss(d, in.fine_point_labels, params),
                   circle_loss(transpose(d), in.fine_pixel_labels, params)),
               0.5);
}

Prediction predict(const Model& model, const ModelParams& p, const SyntheticSample& s,
                   const SampleInputs& in, const ForwardOptions& options, Rng& rng) {
  Prediction pred;
  const ForwardOutput out = forward(model, p, in, options, rng);
  pred.depths = out.depths;
  const RowMatrix image = out.unified.to_matrix();
  const RowMatrix scores = aggregate_max(score_map(image, out.points[0].to_matrix()),
                                         score_map(image, out.points[1].to_matrix()),
                                         score_map(image, out.points[2].to_matrix()));
  pred.coarse = topk_matches(scores, model.config.top_k);
  const RowMatrix pixel_features = s.image_features * p.fine_image_w.mat();
  const RowMatrix point_features = s.point_features * p.fine_point_w.mat();
  pred.fine = fine_refine(pred.coarse, model.index, pixel_features, point_features, s.points,
                          {model.config.radius, model.config.tau});
  if (pred.fine.size() >= 6) {
    std::vector<Correspondence2D3D> corrs;
    corrs.reserve(pred.fine.size());
    for (const FineMatch& f : pred.fine) {
      corrs.push_back({Eigen::Vector2d(double(f.pixel % s.w), double(f.pixel / s.w)),
                       s.points.row(f.point).transpose()});
    }
    Rng ransac_rng = Rng::stream(rng(), "ransac");
    pred.pose = ransac_pose(corrs, s.K,
                            {model.config.ransac_iterations, model.config.ransac_threshold},
                            ransac_rng);
  }
  return pred;
}

}  // namespace fsi2p
