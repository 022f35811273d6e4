#include "tof/baseline.hpp"

#include <cmath>

#include "tof/errors.hpp"
#include "tof/inference.hpp"
#include "tof/nn/layers.hpp"
#include "tof/random.hpp"

namespace tof {

Eigen::MatrixXd temporal_mean_features(const TimeSeriesStack& stack) {
  const auto& d = stack.data();
  const std::size_t t_n = d.dim(0), pixels = d.dim(1) * d.dim(2), c_n = d.dim(3);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(c_n));
  for (std::size_t t = 0; t < t_n; ++t) {
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t c = 0; c < c_n; ++c) {
        out(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) += d[(t * pixels + p) * c_n + c];
      }
    }
  }
  return out / static_cast<double>(t_n);
}

LogisticBaseline LogisticBaseline::fit(const Eigen::MatrixXd& features, const std::vector<std::uint8_t>& targets,
                                       const LogisticConfig& cfg) {
  const Eigen::Index n = features.rows(), k = features.cols();
  if (n == 0 || static_cast<std::size_t>(n) != targets.size()) {
    throw ShapeError("features", "logistic fit needs one target per feature row");
  }
  if (cfg.iterations < 1 || !(cfg.learning_rate > 0.0) || !(cfg.l2 >= 0.0)) {
    throw ConfigError("logistic fit needs iterations >= 1, learning_rate > 0, l2 >= 0");
  }
  LogisticBaseline m;
  m.mean_ = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - m.mean_.transpose();
  m.scale_ = (centered.array().square().colwise().sum() / static_cast<double>(n)).sqrt().transpose();
  for (Eigen::Index j = 0; j < k; ++j) {
    if (!(m.scale_(j) > 1e-12)) m.scale_(j) = 1.0;
  }
  const Eigen::MatrixXd x = centered.array().rowwise() / m.scale_.transpose().array();

  Eigen::VectorXd y(n), w(n);
  std::size_t pos = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = targets[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    pos += targets[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  const double neg = static_cast<double>(n) - static_cast<double>(pos);
  if (pos == 0 || neg == 0) throw DataError("logistic baseline needs both classes in the training data");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (cfg.balance_classes) {
      w(i) = y(i) > 0.5 ? 0.5 * static_cast<double>(n) / static_cast<double>(pos) : 0.5 * static_cast<double>(n) / neg;
    } else {
      w(i) = 1.0;
    }
  }

  Rng rng(cfg.seed);
  m.weights_.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) m.weights_(j) = rng.normal(0.0, 0.01);
  m.bias_ = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int it = 0; it < cfg.iterations; ++it) {
    const Eigen::VectorXd z = (x * m.weights_).array() + m.bias_;
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) r(i) = w(i) * (nn::sigmoid(z(i)) - y(i));
    const Eigen::VectorXd gw = x.transpose() * r * inv_n + cfg.l2 * m.weights_;
    m.weights_ -= cfg.learning_rate * gw;
    m.bias_ -= cfg.learning_rate * r.sum() * inv_n;
  }
  return m;
}

LogisticBaseline LogisticBaseline::fit(const std::vector<PlotSample>& data, const LogisticConfig& cfg) {
  if (data.empty()) throw DataError("logistic baseline needs at least one plot");
  std::size_t rows = 0;
  for (const auto& s : data) rows += s.label.values().size();
  const auto channels = static_cast<Eigen::Index>(data.front().stack.data().dim(3));
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows), channels);
  std::vector<std::uint8_t> y;
  y.reserve(rows);
  Eigen::Index r = 0;
  for (const auto& s : data) {
    const Eigen::MatrixXd f = temporal_mean_features(s.stack);
    x.middleRows(r, f.rows()) = f;
    r += f.rows();
    for (auto v : s.label.values().values()) y.push_back(v ? 1 : 0);
  }
  LogisticBaseline m = fit(x, y, cfg);
  const Eigen::VectorXd p = m.predict_rows(x);
  std::vector<double> probs(p.data(), p.data() + p.size());
  m.threshold_ = select_threshold(probs, y);
  return m;
}

Eigen::VectorXd LogisticBaseline::predict_rows(const Eigen::MatrixXd& features) const {
  if (features.cols() != weights_.size()) throw ShapeError("features", "width does not match the fitted model");
  const Eigen::MatrixXd x =
      (features.rowwise() - mean_.transpose()).array().rowwise() / scale_.transpose().array();
  Eigen::VectorXd z = (x * weights_).array() + bias_;
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = nn::sigmoid(z(i));
  return z;
}

Tensor LogisticBaseline::predict(const TimeSeriesStack& stack) const {
  const Eigen::VectorXd p = predict_rows(temporal_mean_features(stack));
  Tensor out({stack.height(), stack.width()});
  for (Eigen::Index i = 0; i < p.size(); ++i) out[static_cast<std::size_t>(i)] = p(i);
  return out;
}

}  // namespace tof
