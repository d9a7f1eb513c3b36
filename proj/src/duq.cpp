#include "bilip/duq.hpp"
#include <cstdio>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace bilip {

DuqHead init_duq_head(int n_classes, int feature_dim, int centroid_dim, double sigma,
                      double gamma, std::uint64_t seed, double feature_scale) {
  require(n_classes >= 2, "duq: need at least two classes");
  require(sigma > 0.0, "duq: sigma must be positive");
  require(gamma > 0.0 && gamma < 1.0, "duq: gamma must lie in (0,1)");
  require(feature_scale > 0.0, "duq: feature_scale must be positive");
  Rng rng(seed);
  DuqHead head;
  head.sigma = sigma;
  head.gamma = gamma;
  head.feature_scale = feature_scale;
  for (int c = 0; c < n_classes; ++c)
    head.w.push_back(xavier_matrix(centroid_dim, feature_dim, rng));
  std::normal_distribution<double> g(0.0, 0.05);
  head.centroids.resize(centroid_dim, n_classes);
  for (int c = 0; c < n_classes; ++c)
    for (int i = 0; i < centroid_dim; ++i) head.centroids(i, c) = g(rng);
  head.m_acc = Matrix::Zero(centroid_dim, n_classes);
  head.n_acc = Vector::Zero(n_classes);
  return head;
}

double duq_kernel(const DuqHead& head, const Vector& features, int c) {
  require(c >= 0 && c < head.n_classes(), "duq: class index out of range");
  require(features.size() == head.feature_dim(), "duq: feature dimension mismatch");
  const double d2 = (head.w_eff(c) * features - head.centroids.col(c)).squaredNorm() /
                    double(head.centroid_dim());
  return std::exp(-d2 / (2.0 * head.sigma * head.sigma));
}

Vector duq_kernels(const DuqHead& head, const Vector& features) {
  Vector k(head.n_classes());
  for (int c = 0; c < head.n_classes(); ++c) k[c] = duq_kernel(head, features, c);
  return k;
}

DuqLossResult duq_loss(const DuqHead& head, const Matrix& features, const Eigen::VectorXi& labels,
                       bool with_w_grads) {
  const int n = int(features.cols());
  const int C = head.n_classes();
  require(labels.size() == n, "duq: label count mismatch");
  const double e = double(head.centroid_dim());
  const double s2 = head.sigma * head.sigma;

  DuqLossResult out;
  out.feature_grads = Matrix::Zero(features.rows(), n);
  if (with_w_grads)
    for (int c = 0; c < C; ++c)
      out.w_grads.push_back(Matrix::Zero(head.centroid_dim(), head.feature_dim()));

  for (int j = 0; j < n; ++j) {
    for (int c = 0; c < C; ++c) {
      const Matrix w_eff = head.w_eff(c);
      const Vector diff = w_eff * features.col(j) - head.centroids.col(c);
      const double k_raw = std::exp(-diff.squaredNorm() / e / (2.0 * s2));
      const double k = std::clamp(k_raw, 1e-12, 1.0 - 1e-12);
      const double t = labels[j] == c ? 1.0 : 0.0;
      out.loss += -(t * std::log(k) + (1.0 - t) * std::log1p(-k));
      // dK/df = -K/(e s^2) W_eff^T diff; chain through the clamped BCE
      const double dl_dk = -t / k + (1.0 - t) / (1.0 - k);
      const double coef = dl_dk * (-k_raw / (e * s2));
      out.feature_grads.col(j) += coef * (w_eff.transpose() * diff);
      if (with_w_grads)
        out.w_grads[size_t(c)] +=
            (coef / head.feature_scale) * diff * features.col(j).transpose();
    }
  }
  out.loss /= double(n);
  out.feature_grads /= double(n);
  if (with_w_grads)
    for (Matrix& g : out.w_grads) g /= double(n);
  return out;
}

void centroid_update(DuqHead& head, const Matrix& features, const Eigen::VectorXi& labels) {
  const int n = int(features.cols());
  const int C = head.n_classes();
  Vector counts = Vector::Zero(C);
  Matrix sums = Matrix::Zero(head.centroid_dim(), C);
  for (int j = 0; j < n; ++j) {
    const int c = labels[j];
    counts[c] += 1.0;
    sums.col(c) += head.w_eff(c) * features.col(j);
  }
  if (!head.initialized) {
    head.n_acc = counts;
    head.m_acc = sums;
    head.initialized = true;
  } else {
    head.n_acc = head.gamma * head.n_acc + (1.0 - head.gamma) * counts;
    head.m_acc = head.gamma * head.m_acc + (1.0 - head.gamma) * sums;
  }
  for (int c = 0; c < C; ++c)
    if (head.n_acc[c] > 1e-12) head.centroids.col(c) = head.m_acc.col(c) / head.n_acc[c];
}

double certainty(const DuqHead& head, const Vector& features) {
  return duq_kernels(head, features).maxCoeff();
}

int predict(const DuqHead& head, const Vector& features) {
  const Vector k = duq_kernels(head, features);
  int best = 0;
  for (int c = 1; c < k.size(); ++c)
    if (k[c] > k[best]) best = c;  // strict: ties keep the lowest index
  return best;
}

double auroc(const Vector& scores, const Eigen::VectorXi& labels) {
  const long n = scores.size();
  require(labels.size() == n, "auroc: size mismatch");
  std::vector<long> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](long a, long b) { return scores[a] < scores[b]; });

  // midranks over tie groups
  std::vector<double> rank(static_cast<size_t>(n));
  long i = 0;
  while (i < n) {
    long j = i;
    while (j + 1 < n && scores[idx[size_t(j + 1)]] == scores[idx[size_t(i)]]) ++j;
    const double mid = 0.5 * double(i + j) + 1.0;
    for (long k = i; k <= j; ++k) rank[size_t(idx[size_t(k)])] = mid;
    i = j + 1;
  }

  double pos_rank_sum = 0.0;
  long n_pos = 0;
  for (long k = 0; k < n; ++k)
    if (labels[k] == 1) {
      pos_rank_sum += rank[size_t(k)];
      ++n_pos;
    }
  const long n_neg = n - n_pos;
  require(n_pos > 0 && n_neg > 0, "auroc: need both classes");
  const double u = pos_rank_sum - double(n_pos) * double(n_pos + 1) / 2.0;
  return u / (double(n_pos) * double(n_neg));
}

MoonsData two_moons(const MoonsConfig& config) {
  require(config.n_samples >= 2, "two_moons: need at least two samples");
  require(config.noise >= 0.0, "two_moons: noise must be >= 0");
  const int n_out = config.n_samples / 2 + config.n_samples % 2;
  const int n_in = config.n_samples / 2;

  MoonsData data;
  data.points.resize(2, config.n_samples);
  data.labels.resize(config.n_samples);
  for (int i = 0; i < n_out; ++i) {
    const double t = n_out > 1 ? std::numbers::pi * double(i) / double(n_out - 1) : 0.0;
    data.points(0, i) = std::cos(t);
    data.points(1, i) = std::sin(t);
    data.labels[i] = 0;
  }
  for (int i = 0; i < n_in; ++i) {
    const double t = n_in > 1 ? std::numbers::pi * double(i) / double(n_in - 1) : 0.0;
    data.points(0, n_out + i) = 1.0 - std::cos(t);
    data.points(1, n_out + i) = 0.5 - std::sin(t);
    data.labels[n_out + i] = 1;
  }
  Rng rng(config.seed);
  if (config.noise > 0.0) {
    std::normal_distribution<double> g(0.0, config.noise);
    for (int j = 0; j < config.n_samples; ++j) {
      data.points(0, j) += g(rng);
      data.points(1, j) += g(rng);
    }
  }
  // deterministic shuffle so minibatches mix the classes
  std::vector<int> order(static_cast<size_t>(config.n_samples));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  MoonsData shuffled;
  shuffled.points.resize(2, config.n_samples);
  shuffled.labels.resize(config.n_samples);
  for (int j = 0; j < config.n_samples; ++j) {
    shuffled.points.col(j) = data.points.col(order[size_t(j)]);
    shuffled.labels[j] = data.labels[order[size_t(j)]];
  }
  return shuffled;
}

namespace {

Matrix extract_features(const CompositeBlnn& extractor, const Matrix& X,
                        const SolverConfig& inner, Matrix* warm1, Matrix* warm2,
                        CompositeBatchForward* fwd_out) {
  CompositeBatchForward fwd = composite_forward_batch(extractor, X, inner, warm1, warm2);
  if (warm1) {
    for (int j = 0; j < X.cols(); ++j)
      if (fwd.stage1.converged[j]) warm1->col(j) = fwd.stage1.y_star.col(j);
  }
  if (warm2) {
    for (int j = 0; j < X.cols(); ++j)
      if (fwd.stage2.converged[j]) warm2->col(j) = fwd.stage2.y_star.col(j);
  }
  Matrix feats = fwd.outputs;
  if (fwd_out) *fwd_out = std::move(fwd);
  return feats;
}

}  // namespace

DuqTrainReport train_duq(CompositeBlnn& extractor, DuqHead& head, const MoonsData& train,
                         const MoonsData& test, const DuqTrainConfig& config) {
  require(head.feature_dim() == extractor.d2(), "train_duq: head/extractor dimension mismatch");
  const long n = train.points.cols();
  const int bs = config.batch_size;
  const long p1 = extractor.first.core.param_count();
  const long p2 = extractor.second.core.param_count();

  Vector theta(p1 + p2);
  flatten_into(extractor.first.core.layers, theta, 0);
  flatten_into(extractor.second.core.layers, theta, p1);
  SgdOpt core_opt{config.lr, config.momentum, config.weight_decay, {}};
  std::vector<SgdOpt> w_opts(size_t(head.n_classes()),
                             SgdOpt{config.lr, config.momentum, config.weight_decay, {}});

  Matrix warm1 = Matrix::Zero(extractor.d1(), n);
  Matrix warm2 = Matrix::Zero(extractor.d2(), n);

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(config.seed ^ 0xc0ffee);

  DuqTrainReport rep;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    long batches = 0;
    for (long start = 0; start < n; start += bs) {
      const long m = std::min<long>(bs, n - start);
      Matrix Xb(2, m), w1(extractor.d1(), m), w2(extractor.d2(), m);
      Eigen::VectorXi yb(m);
      for (long j = 0; j < m; ++j) {
        const int idx = order[size_t(start + j)];
        Xb.col(j) = train.points.col(idx);
        w1.col(j) = warm1.col(idx);
        w2.col(j) = warm2.col(idx);
        yb[j] = train.labels[idx];
      }

      CompositeBatchForward fwd;
      const Matrix feats = extract_features(extractor, Xb, config.inner, &w1, &w2, &fwd);
      for (long j = 0; j < m; ++j) {
        const int idx = order[size_t(start + j)];
        if (fwd.stage1.converged[j]) warm1.col(idx) = w1.col(j);
        if (fwd.stage2.converged[j]) warm2.col(idx) = w2.col(j);
      }

      const DuqLossResult loss = duq_loss(head, feats, yb, true);
#ifdef BILIP_DUQ_DEBUG
      if (epoch <= 2) {
        double dtrue = 0, dother = 0, wn = 0;
        for (long j = 0; j < m; ++j)
          for (int c = 0; c < 2; ++c) {
            const double d2 = (head.w[size_t(c)] * feats.col(j) - head.centroids.col(c))
                                  .squaredNorm() /
                              double(head.centroid_dim()) /
                              (2.0 * head.sigma * head.sigma);
            (yb[j] == c ? dtrue : dother) += d2;
          }
        for (int c = 0; c < 2; ++c) wn += head.w[size_t(c)].norm();
        std::printf("  e%d b%ld loss %.3f Dtrue %.2f Dother %.2f |W| %.3f |e| %.3f\n", epoch,
                    start / bs, loss.loss, dtrue / double(m), dother / double(m), wn,
                    head.centroids.norm());
      }
#endif
      epoch_loss += loss.loss;
      ++batches;

      CompositeGrads grads{zero_grads_like(extractor.first.core),
                           zero_grads_like(extractor.second.core)};
      composite_backward_batch(extractor, Xb, fwd, loss.feature_grads, config.inner.tol, grads,
                               1.0);
      Vector gflat(p1 + p2);
      flatten_into(grads.first, gflat, 0);
      flatten_into(grads.second, gflat, p1);
      core_opt.step(theta, gflat);
      unflatten_from(theta, extractor.first.core.layers, 0);
      unflatten_from(theta, extractor.second.core.layers, p1);
      project_nonneg(extractor.first.core);
      project_nonneg(extractor.second.core);
      flatten_into(extractor.first.core.layers, theta, 0);
      flatten_into(extractor.second.core.layers, theta, p1);

      for (int c = 0; c < head.n_classes(); ++c) {
        Matrix& W = head.w[size_t(c)];
        Vector wflat = Eigen::Map<Vector>(W.data(), W.size());
        const Vector wg =
            Eigen::Map<const Vector>(loss.w_grads[size_t(c)].data(), W.size());
        w_opts[size_t(c)].step(wflat, wg);
        W = Eigen::Map<Matrix>(wflat.data(), W.rows(), W.cols());
      }

      // centroids track the post-update features of the same batch, gradient-free
      const Matrix feats_updated =
          extract_features(extractor, Xb, config.inner, &w1, &w2, nullptr);
      centroid_update(head, feats_updated, yb);
    }
    rep.loss.push_back(epoch_loss / double(batches));
  }
  rep.final_loss = rep.loss.back();

  // held-out accuracy
  Matrix test_feats = extract_features(extractor, test.points, config.inner, nullptr, nullptr,
                                       nullptr);
  long correct = 0;
  for (long j = 0; j < test.points.cols(); ++j)
    if (predict(head, test_feats.col(j)) == test.labels[j]) ++correct;
  rep.accuracy = double(correct) / double(test.points.cols());

  // certainty grid over the padded bounding box of the training data
  const double x0 = train.points.row(0).minCoeff(), x1 = train.points.row(0).maxCoeff();
  const double y0 = train.points.row(1).minCoeff(), y1 = train.points.row(1).maxCoeff();
  const double px = (x1 - x0) * config.grid_padding, py = (y1 - y0) * config.grid_padding;
  const int res = config.grid_resolution;
  rep.grid.resize(res * res, 3);
  Matrix row_warm1 = Matrix::Zero(extractor.d1(), res);
  Matrix row_warm2 = Matrix::Zero(extractor.d2(), res);
  for (int r = 0; r < res; ++r) {
    Matrix pts(2, res);
    const double gy = y0 - py + (y1 - y0 + 2 * py) * double(r) / double(res - 1);
    for (int cidx = 0; cidx < res; ++cidx) {
      pts(0, cidx) = x0 - px + (x1 - x0 + 2 * px) * double(cidx) / double(res - 1);
      pts(1, cidx) = gy;
    }
    const Matrix feats =
        extract_features(extractor, pts, config.inner, &row_warm1, &row_warm2, nullptr);
    for (int cidx = 0; cidx < res; ++cidx) {
      rep.grid(r * res + cidx, 0) = pts(0, cidx);
      rep.grid(r * res + cidx, 1) = pts(1, cidx);
      rep.grid(r * res + cidx, 2) = certainty(head, feats.col(cidx));
    }
  }

  // detection score: test moons vs uniform background over the same box
  Rng ood_rng(config.seed ^ 0x00d);
  const Matrix ood = uniform_points((Vector(2) << x0 - px, y0 - py).finished(),
                                    (Vector(2) << x1 + px, y1 + py).finished(),
                                    config.ood_samples, ood_rng);
  const Matrix ood_feats = extract_features(extractor, ood, config.inner, nullptr, nullptr,
                                            nullptr);
  Vector scores(test.points.cols() + config.ood_samples);
  Eigen::VectorXi labels(scores.size());
  for (long j = 0; j < test.points.cols(); ++j) {
    scores[j] = certainty(head, test_feats.col(j));
    labels[j] = 1;
  }
  for (int j = 0; j < config.ood_samples; ++j) {
    scores[test.points.cols() + j] = certainty(head, ood_feats.col(j));
    labels[test.points.cols() + j] = 0;
  }
  rep.auroc_uniform = auroc(scores, labels);
  return rep;
}

}  // namespace bilip
