#include "fedlev/vae.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "fedlev/random.hpp"

namespace fedlev {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

using Eigen::MatrixXd;
using Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void VaeConfig::validate() const {
  if (input_dim == 0) throw VaeError("vae: input_dim must be positive");
  if (block_sizes.empty()) throw VaeError("vae: at least one block required");
  std::size_t total = 0;
  for (auto b : block_sizes) {
    if (b == 0) throw VaeError("vae: empty block");
    total += b;
  }
  if (total != input_dim) throw VaeError("vae: block sizes must sum to input_dim");
  if (block_hidden == 0 || trunk_hidden == 0 || latent_dim == 0) throw VaeError("vae: layer widths must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw VaeError("vae: lambda must be finite and nonnegative");
}

VaeConfig make_vae_config(const VaeArch& arch, std::vector<std::size_t> block_sizes, std::size_t confounder_dim,
                          double lambda) {
  VaeConfig c;
  c.input_dim = std::accumulate(block_sizes.begin(), block_sizes.end(), std::size_t{0});
  c.block_sizes = std::move(block_sizes);
  c.block_hidden = arch.block_hidden;
  c.trunk_hidden = arch.trunk_hidden;
  c.latent_dim = arch.latent_dim;
  c.confounder_dim = confounder_dim;
  c.lambda = lambda;
  c.likelihood = arch.likelihood;
  c.validate();
  return c;
}

std::string_view likelihood_name(Likelihood l) { return l == Likelihood::Bernoulli ? "bernoulli" : "gaussian"; }

Likelihood parse_likelihood(std::string_view name) {
  if (name == "bernoulli") return Likelihood::Bernoulli;
  if (name == "gaussian") return Likelihood::Gaussian;
  throw VaeError("unknown likelihood '" + std::string(name) + "'");
}

std::vector<std::size_t> block_sizes_for_selection(std::span<const SparseBinaryMatrix::Index> selected,
                                                   std::size_t d, std::size_t n_blocks) {
  if (d == 0 || n_blocks == 0) throw VaeError("block assignment: d and n_blocks must be positive");
  std::vector<std::size_t> map(d);
  for (std::size_t j = 0; j < d; ++j) map[j] = j * n_blocks / d;
  return block_sizes_for_selection(selected, map);
}

std::vector<std::size_t> block_sizes_for_selection(std::span<const SparseBinaryMatrix::Index> selected,
                                                   std::span<const std::size_t> block_of_feature) {
  if (selected.empty()) throw VaeError("block assignment: empty selection");
  for (std::size_t j = 1; j < block_of_feature.size(); ++j) {
    if (block_of_feature[j] < block_of_feature[j - 1]) {
      throw VaeError("block assignment: feature->block map must be non-decreasing");
    }
  }
  std::vector<std::size_t> sizes;
  std::size_t current = 0;
  for (std::size_t m = 0; m < selected.size(); ++m) {
    const auto j = selected[m];
    if (j >= block_of_feature.size()) throw VaeError("block assignment: selected feature out of range");
    if (m > 0 && j <= selected[m - 1]) throw VaeError("block assignment: selection must be strictly ascending");
    const std::size_t b = block_of_feature[j];
    if (sizes.empty() || b != current) {
      sizes.push_back(0);
      current = b;
    }
    ++sizes.back();
  }
  return sizes;
}

// --- Layout and parameters ---------------------------------------------------

VaeLayout::VaeLayout(VaeConfig config) : config_(std::move(config)) {
  config_.validate();
  nb_ = config_.n_blocks();
  const std::size_t hb = config_.block_hidden;
  const std::size_t ht = config_.trunk_hidden;
  const std::size_t z = config_.latent_dim;
  const std::size_t c = config_.confounder_dim;

  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    tensors_.push_back({std::move(name), size_, rows, cols});
    size_ += rows * cols;
  };
  std::size_t start = 0;
  for (std::size_t b = 0; b < nb_; ++b) {
    const std::size_t w = config_.block_sizes[b];
    block_starts_.push_back(start);
    for (std::size_t j = 0; j < w; ++j) block_of_.push_back(static_cast<std::uint32_t>(b));
    start += w;
    add("enc_w[" + std::to_string(b) + "]", hb, w);
    add("enc_b[" + std::to_string(b) + "]", hb, 1);
  }
  add("trunk_w", ht, nb_ * hb);
  add("trunk_b", ht, 1);
  add("mu_w", z, ht);
  add("mu_b", z, 1);
  add("logvar_w", z, ht);
  add("logvar_b", z, 1);
  add("dec_w", ht, z + c);
  add("dec_b", ht, 1);
  for (std::size_t b = 0; b < nb_; ++b) {
    add("out_w[" + std::to_string(b) + "]", config_.block_sizes[b], ht);
    add("out_b[" + std::to_string(b) + "]", config_.block_sizes[b], 1);
  }
}

VaeParams::VaeParams(const VaeConfig& config) : VaeParams(std::make_shared<const VaeLayout>(config)) {}

VaeParams::VaeParams(std::shared_ptr<const VaeLayout> layout)
    : layout_(std::move(layout)), values_(VectorXd::Zero(static_cast<Eigen::Index>(layout_->size()))) {}

VaeParams::MatMap VaeParams::tensor(std::size_t id) {
  const auto& t = layout_->tensor(id);
  return MatMap(values_.data() + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
}

VaeParams::ConstMatMap VaeParams::tensor(std::size_t id) const {
  const auto& t = layout_->tensor(id);
  return ConstMatMap(values_.data() + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
}

VaeParams VaeParams::zeros_like() const { return VaeParams(layout_); }

VaeParams init_params(const VaeConfig& config, std::uint64_t seed) {
  VaeParams p(config);
  const auto& L = p.layout();
  Rng rng = make_rng(seed, {0x696e6974ULL});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t id = 0; id < L.tensors().size(); ++id) {
    const auto& t = L.tensor(id);
    if (t.name.find("_b") != std::string::npos) continue;  // biases start at zero
    double scale = 1.0 / std::sqrt(static_cast<double>(t.cols));
    if (id == L.logvar_w()) scale *= 0.1;
    auto w = p.tensor(id);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = scale * normal(rng);
  }
  const double out_bias = config.likelihood == Likelihood::Bernoulli
                              ? std::log(kInitAccessibility / (1.0 - kInitAccessibility))
                              : kInitAccessibility;
  for (std::size_t b = 0; b < config.n_blocks(); ++b) p.tensor(L.out_b(b)).setConstant(out_bias);
  return p;
}

// --- Forward pass ------------------------------------------------------------

namespace {

struct EncoderState {
  MatrixXd h1;      // B*h_b x m
  MatrixXd h2;      // h_t x m
  MatrixXd mu;      // z x m
  MatrixXd lv_raw;  // z x m, before clamping
  MatrixXd lv;      // z x m
};

EncoderState run_encoder(const VaeParams& p, const SpMat& x) {
  const auto& L = p.layout();
  const auto& cfg = L.config();
  if (static_cast<std::size_t>(x.rows()) != cfg.input_dim) throw VaeError("encode: input dimension mismatch");
  const auto hb = static_cast<Eigen::Index>(cfg.block_hidden);
  const Eigen::Index m = x.cols();
  const std::size_t nb = cfg.n_blocks();

  EncoderState s;
  s.h1.resize(static_cast<Eigen::Index>(nb) * hb, m);
  for (std::size_t b = 0; b < nb; ++b) {
    s.h1.middleRows(static_cast<Eigen::Index>(b) * hb, hb).colwise() = VectorXd(p.tensor(L.enc_b(b)));
  }
  std::vector<VaeParams::ConstMatMap> enc_w;
  enc_w.reserve(nb);
  for (std::size_t b = 0; b < nb; ++b) enc_w.push_back(p.tensor(L.enc_w(b)));
  for (Eigen::Index k = 0; k < m; ++k) {
    for (SpMat::InnerIterator it(x, k); it; ++it) {
      const auto j = static_cast<std::size_t>(it.row());
      const std::size_t b = L.block_of(j);
      const auto local = static_cast<Eigen::Index>(j - L.block_start(b));
      s.h1.col(k).segment(static_cast<Eigen::Index>(b) * hb, hb) += it.value() * enc_w[b].col(local);
    }
  }
  s.h1 = s.h1.array().tanh().matrix();

  s.h2 = p.tensor(L.trunk_w()) * s.h1;
  s.h2.colwise() += VectorXd(p.tensor(L.trunk_b()));
  s.h2 = s.h2.array().tanh().matrix();

  s.mu = p.tensor(L.mu_w()) * s.h2;
  s.mu.colwise() += VectorXd(p.tensor(L.mu_b()));
  s.lv_raw = p.tensor(L.logvar_w()) * s.h2;
  s.lv_raw.colwise() += VectorXd(p.tensor(L.logvar_b()));
  s.lv = s.lv_raw.cwiseMax(-kLogVarBound).cwiseMin(kLogVarBound);
  return s;
}

struct DecoderState {
  MatrixXd zc;   // (z+c) x m
  MatrixXd g;    // h_t x m
  MatrixXd out;  // s x m
};

DecoderState run_decoder(const VaeParams& p, const MatrixXd& z, const MatrixXd& c) {
  const auto& L = p.layout();
  const auto& cfg = L.config();
  if (static_cast<std::size_t>(z.rows()) != cfg.latent_dim) throw VaeError("decode: latent dimension mismatch");
  if (static_cast<std::size_t>(c.rows()) != cfg.confounder_dim) throw VaeError("decode: confounder dimension mismatch");
  if (z.cols() != c.cols()) throw VaeError("decode: latent and confounder batch sizes differ");
  DecoderState s;
  s.zc.resize(z.rows() + c.rows(), z.cols());
  s.zc.topRows(z.rows()) = z;
  s.zc.bottomRows(c.rows()) = c;
  s.g = p.tensor(L.dec_w()) * s.zc;
  s.g.colwise() += VectorXd(p.tensor(L.dec_b()));
  s.g = s.g.array().tanh().matrix();
  s.out.resize(static_cast<Eigen::Index>(cfg.input_dim), z.cols());
  for (std::size_t b = 0; b < cfg.n_blocks(); ++b) {
    const auto start = static_cast<Eigen::Index>(L.block_start(b));
    const auto len = static_cast<Eigen::Index>(cfg.block_sizes[b]);
    auto rows = s.out.middleRows(start, len);
    rows.noalias() = p.tensor(L.out_w(b)) * s.g;
    rows.colwise() += VectorXd(p.tensor(L.out_b(b)));
  }
  return s;
}

}  // namespace

BatchPosterior encode_batch(const VaeParams& params, const Eigen::SparseMatrix<double>& x) {
  auto s = run_encoder(params, x);
  return {std::move(s.mu), std::move(s.lv)};
}

LatentPosterior encode(const VaeParams& params, const Eigen::VectorXd& x) {
  const SpMat xs = MatrixXd(x).sparseView(0.0, 0.0);
  auto s = run_encoder(params, xs);
  return {s.mu.col(0), s.lv.col(0)};
}

Eigen::VectorXd reparameterize(const LatentPosterior& post, const Eigen::VectorXd& noise) {
  if (noise.size() != post.mu.size() || post.log_var.size() != post.mu.size()) {
    throw VaeError("reparameterize: dimension mismatch");
  }
  return post.mu.array() + (0.5 * post.log_var.array()).exp() * noise.array();
}

Eigen::VectorXd decode(const VaeParams& params, const Eigen::VectorXd& z, const Eigen::VectorXd& c) {
  return run_decoder(params, MatrixXd(z), MatrixXd(c)).out.col(0);
}

// --- Loss and gradient -------------------------------------------------------

namespace {

struct TermWeights {
  double prior;
  double marginal;
  double recon;
};

LossBreakdown evaluate(const VaeParams& p, const Batch& batch, const MatrixXd& noise, double lambda,
                       const TermWeights& w, VaeParams* grad) {
  const auto& L = p.layout();
  const auto& cfg = L.config();
  const Eigen::Index m = batch.size();
  if (m == 0) throw VaeError("loss: empty batch");
  if (batch.c.cols() != m) throw VaeError("loss: confounder batch size mismatch");
  if (noise.rows() != static_cast<Eigen::Index>(cfg.latent_dim) || noise.cols() != m) {
    throw VaeError("loss: noise must be latent_dim x batch size");
  }
  if (w.marginal != 0.0 && m < 2) throw VaeError("loss: marginal term needs a batch of at least 2");
  const double inv_m = 1.0 / static_cast<double>(m);

  const EncoderState enc = run_encoder(p, batch.x);
  const MatrixXd sd = (0.5 * enc.lv.array()).exp().matrix();
  const MatrixXd z = enc.mu + sd.cwiseProduct(noise);
  const DecoderState dec = run_decoder(p, z, batch.c);
  const MatrixXd x = MatrixXd(batch.x);

  LossBreakdown out;
  out.prior = 0.5 * inv_m * (enc.lv.array().exp() + enc.mu.array().square() - 1.0 - enc.lv.array()).sum();

  MatrixXd d_out;
  if (cfg.likelihood == Likelihood::Bernoulli) {
    double r = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
      for (Eigen::Index j = 0; j < dec.out.rows(); ++j) r += softplus(dec.out(j, k)) - x(j, k) * dec.out(j, k);
    }
    out.recon = r * inv_m;
    if (grad) d_out = (w.recon * inv_m) * (dec.out.unaryExpr([](double v) { return sigmoid(v); }) - x);
  } else {
    const MatrixXd diff = dec.out - x;
    out.recon = 0.5 * inv_m * diff.squaredNorm();
    if (grad) d_out = (w.recon * inv_m) * diff;
  }

  // Minibatch-mixture marginal: L(b, b') = log N(z_b; mu_b', sigma_b'^2).
  MatrixXd dz_marg;
  MatrixXd dmu_marg;
  MatrixXd dlv_marg;
  if (m >= 2) {
    const MatrixXd inv_var = (-enc.lv.array()).exp().matrix();
    const double zdim = static_cast<double>(cfg.latent_dim);
    MatrixXd logp(m, m);
    for (Eigen::Index b = 0; b < m; ++b) {
      for (Eigen::Index q = 0; q < m; ++q) {
        const auto diff = (z.col(b) - enc.mu.col(q)).array();
        logp(b, q) = -0.5 * zdim * kLog2Pi - 0.5 * enc.lv.col(q).sum() -
                     0.5 * (diff.square() * inv_var.col(q).array()).sum();
      }
    }
    MatrixXd soft(m, m);
    double marg = 0.0;
    for (Eigen::Index b = 0; b < m; ++b) {
      const double mx = logp.row(b).maxCoeff();
      const auto e = (logp.row(b).array() - mx).exp();
      const double se = e.sum();
      marg += logp(b, b) - (mx + std::log(se)) + std::log(static_cast<double>(m));
      soft.row(b) = e / se;
    }
    out.marginal = marg * inv_m;

    if (grad && w.marginal != 0.0) {
      dz_marg = MatrixXd::Zero(z.rows(), m);
      dmu_marg = MatrixXd::Zero(z.rows(), m);
      dlv_marg = MatrixXd::Zero(z.rows(), m);
      for (Eigen::Index b = 0; b < m; ++b) {
        for (Eigen::Index q = 0; q < m; ++q) {
          const double coef = w.marginal * inv_m * ((b == q ? 1.0 : 0.0) - soft(b, q));
          if (coef == 0.0) continue;
          const VectorXd t = (z.col(b) - enc.mu.col(q)).cwiseProduct(inv_var.col(q));
          dz_marg.col(b) -= coef * t;
          dmu_marg.col(q) += coef * t;
          dlv_marg.col(q) +=
              coef * (-0.5 + 0.5 * (z.col(b) - enc.mu.col(q)).array().square() * inv_var.col(q).array()).matrix();
        }
      }
    }
  }
  out.total = out.prior + lambda * out.marginal + (1.0 + lambda) * out.recon;
  if (!grad) return out;

  *grad = p.zeros_like();
  VaeParams& g = *grad;
  const std::size_t nb = cfg.n_blocks();
  const auto hb = static_cast<Eigen::Index>(cfg.block_hidden);

  // Decoder heads.
  MatrixXd dg = MatrixXd::Zero(dec.g.rows(), m);
  for (std::size_t b = 0; b < nb; ++b) {
    const auto start = static_cast<Eigen::Index>(L.block_start(b));
    const auto len = static_cast<Eigen::Index>(cfg.block_sizes[b]);
    const auto dob = d_out.middleRows(start, len);
    g.tensor(L.out_w(b)).noalias() = dob * dec.g.transpose();
    g.tensor(L.out_b(b)) = dob.rowwise().sum();
    dg.noalias() += p.tensor(L.out_w(b)).transpose() * dob;
  }
  const MatrixXd dg_pre = dg.cwiseProduct((1.0 - dec.g.array().square()).matrix());
  g.tensor(L.dec_w()).noalias() = dg_pre * dec.zc.transpose();
  g.tensor(L.dec_b()) = dg_pre.rowwise().sum();
  MatrixXd dz = (p.tensor(L.dec_w()).transpose() * dg_pre).topRows(z.rows());

  MatrixXd dmu = (w.prior * inv_m) * enc.mu;
  MatrixXd dlv = (0.5 * w.prior * inv_m) * (enc.lv.array().exp() - 1.0).matrix();
  if (dz_marg.size() != 0) {
    dz += dz_marg;
    dmu += dmu_marg;
    dlv += dlv_marg;
  }
  // Reparameterization.
  dmu += dz;
  dlv += (0.5 * dz.array() * sd.array() * noise.array()).matrix();
  // Clamp passes gradient only strictly inside the bounds.
  const MatrixXd dlv_raw =
      ((enc.lv_raw.array() > -kLogVarBound) && (enc.lv_raw.array() < kLogVarBound)).select(dlv, 0.0);

  g.tensor(L.mu_w()).noalias() = dmu * enc.h2.transpose();
  g.tensor(L.mu_b()) = dmu.rowwise().sum();
  g.tensor(L.logvar_w()).noalias() = dlv_raw * enc.h2.transpose();
  g.tensor(L.logvar_b()) = dlv_raw.rowwise().sum();
  MatrixXd dh2 = p.tensor(L.mu_w()).transpose() * dmu;
  dh2.noalias() += p.tensor(L.logvar_w()).transpose() * dlv_raw;
  const MatrixXd dh2_pre = dh2.cwiseProduct((1.0 - enc.h2.array().square()).matrix());
  g.tensor(L.trunk_w()).noalias() = dh2_pre * enc.h1.transpose();
  g.tensor(L.trunk_b()) = dh2_pre.rowwise().sum();
  const MatrixXd dh1 = p.tensor(L.trunk_w()).transpose() * dh2_pre;
  const MatrixXd dh1_pre = dh1.cwiseProduct((1.0 - enc.h1.array().square()).matrix());

  std::vector<VaeParams::MatMap> enc_w;
  enc_w.reserve(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    enc_w.push_back(g.tensor(L.enc_w(b)));
    g.tensor(L.enc_b(b)) = dh1_pre.middleRows(static_cast<Eigen::Index>(b) * hb, hb).rowwise().sum();
  }
  for (Eigen::Index k = 0; k < m; ++k) {
    for (SpMat::InnerIterator it(batch.x, k); it; ++it) {
      const auto j = static_cast<std::size_t>(it.row());
      const std::size_t b = L.block_of(j);
      const auto local = static_cast<Eigen::Index>(j - L.block_start(b));
      enc_w[b].col(local) += it.value() * dh1_pre.col(k).segment(static_cast<Eigen::Index>(b) * hb, hb);
    }
  }
  return out;
}

void check_lambda(double lambda, Eigen::Index m) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw VaeError("loss: lambda must be finite and nonnegative");
  if (lambda > 0.0 && m < 2) throw VaeError("loss: marginal term needs a batch of at least 2 when lambda > 0");
}

}  // namespace

LossBreakdown loss(const VaeParams& params, const Batch& batch, const Eigen::MatrixXd& noise, double lambda) {
  check_lambda(lambda, batch.size());
  return evaluate(params, batch, noise, lambda, {1.0, lambda, 1.0 + lambda}, nullptr);
}

LossAndGrad loss_and_grad(const VaeParams& params, const Batch& batch, const Eigen::MatrixXd& noise, double lambda) {
  check_lambda(lambda, batch.size());
  LossAndGrad out;
  out.loss = evaluate(params, batch, noise, lambda, {1.0, lambda, 1.0 + lambda}, &out.grad);
  return out;
}

GradComponents grad_components(const VaeParams& params, const Batch& batch, const Eigen::MatrixXd& noise) {
  GradComponents out;
  evaluate(params, batch, noise, 0.0, {1.0, 0.0, 0.0}, &out.prior);
  evaluate(params, batch, noise, 0.0, {0.0, 1.0, 0.0}, &out.marginal);
  evaluate(params, batch, noise, 0.0, {0.0, 0.0, 1.0}, &out.recon);
  return out;
}

// --- Confounders -------------------------------------------------------------

DepthMoments depth_moments(std::span<const CellRecord> cells) {
  DepthMoments m;
  m.n = cells.size();
  if (m.n == 0) return m;
  double sum = 0.0;
  for (const auto& c : cells) sum += std::log1p(static_cast<double>(c.depth));
  m.mean = sum / static_cast<double>(m.n);
  double ss = 0.0;
  for (const auto& c : cells) {
    const double d = std::log1p(static_cast<double>(c.depth)) - m.mean;
    ss += d * d;
  }
  m.var = ss / static_cast<double>(m.n);
  return m;
}

ConfounderEncoder::ConfounderEncoder(double mean, double stddev, std::size_t n_batches)
    : mean_(mean), stddev_(stddev > 0.0 ? stddev : 1.0), n_batches_(n_batches) {
  if (!std::isfinite(mean) || !std::isfinite(stddev)) throw VaeError("confounders: non-finite depth statistics");
}

ConfounderEncoder ConfounderEncoder::from_moments(std::span<const DepthMoments> clients, std::size_t n_batches) {
  std::size_t n = 0;
  double sum = 0.0;
  for (const auto& c : clients) {
    n += c.n;
    sum += static_cast<double>(c.n) * c.mean;
  }
  if (n == 0) throw VaeError("confounders: no cells");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& c : clients) {
    const double d = c.mean - mean;
    ss += static_cast<double>(c.n) * (c.var + d * d);
  }
  return ConfounderEncoder(mean, std::sqrt(ss / static_cast<double>(n)), n_batches);
}

Eigen::VectorXd ConfounderEncoder::encode(const CellRecord& cell) const {
  if (cell.batch_id < 0 || static_cast<std::size_t>(cell.batch_id) >= n_batches_) {
    throw VaeError("confounders: batch_id " + std::to_string(cell.batch_id) + " outside [0, " +
                   std::to_string(n_batches_) + ")");
  }
  VectorXd c = VectorXd::Zero(static_cast<Eigen::Index>(dim()));
  c(0) = (std::log1p(static_cast<double>(cell.depth)) - mean_) / stddev_;
  c(1 + cell.batch_id) = 1.0;
  return c;
}

TrainingData make_training_data(const ClientShard& shard, std::span<const SparseBinaryMatrix::Index> selected,
                                const Eigen::VectorXd& scale, const ConfounderEncoder& confounders) {
  const std::size_t d = shard.matrix.n_cols();
  if (scale.size() != 0 && static_cast<std::size_t>(scale.size()) != selected.size()) {
    throw VaeError("training data: scale length must match the selection");
  }
  std::vector<std::int64_t> pos(d, -1);
  for (std::size_t m = 0; m < selected.size(); ++m) {
    if (selected[m] >= d) throw VaeError("training data: selected feature out of range");
    pos[selected[m]] = static_cast<std::int64_t>(m);
  }
  const auto s = static_cast<Eigen::Index>(selected.size());
  const auto n = static_cast<Eigen::Index>(shard.matrix.n_rows());
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t i = 0; i < shard.matrix.n_rows(); ++i) {
    for (auto j : shard.matrix.row(i)) {
      const auto m = pos[j];
      if (m < 0) continue;
      const double v = scale.size() == 0 ? 1.0 : scale(m);
      trip.emplace_back(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(i), v);
    }
  }
  TrainingData out;
  out.x.resize(s, n);
  out.x.setFromTriplets(trip.begin(), trip.end());
  out.c.resize(static_cast<Eigen::Index>(confounders.dim()), n);
  out.cell_ids.reserve(shard.cells.size());
  for (std::size_t i = 0; i < shard.cells.size(); ++i) {
    out.c.col(static_cast<Eigen::Index>(i)) = confounders.encode(shard.cells[i]);
    out.cell_ids.push_back(shard.cells[i].cell_id);
  }
  return out;
}

Batch gather_batch(const TrainingData& data, std::span<const std::size_t> cells) {
  Batch b;
  const auto m = static_cast<Eigen::Index>(cells.size());
  Eigen::VectorXi sizes(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = static_cast<Eigen::Index>(cells[static_cast<std::size_t>(k)]);
    if (i >= data.x.cols()) throw VaeError("gather_batch: cell index out of range");
    sizes(k) = static_cast<int>(data.x.col(i).nonZeros());
  }
  b.x.resize(data.x.rows(), m);
  b.x.reserve(sizes);
  b.c.resize(data.c.rows(), m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = static_cast<Eigen::Index>(cells[static_cast<std::size_t>(k)]);
    for (SpMat::InnerIterator it(data.x, i); it; ++it) b.x.insert(it.row(), k) = it.value();
    b.c.col(k) = data.c.col(i);
  }
  b.x.makeCompressed();
  return b;
}

// --- Training ----------------------------------------------------------------

Eigen::MatrixXd step_noise(std::uint64_t seed, std::size_t step, std::size_t latent_dim, std::size_t m) {
  Rng rng = make_rng(seed, {0x6e6f697365ULL, step});
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd e(static_cast<Eigen::Index>(latent_dim), static_cast<Eigen::Index>(m));
  for (Eigen::Index k = 0; k < e.size(); ++k) e.data()[k] = normal(rng);
  return e;
}

LocalTrainResult local_train(const VaeParams& start, const TrainingData& data, const LocalTrainOptions& options) {
  const std::size_t n = data.n();
  if (n == 0) throw VaeError("local_train: empty shard");
  if (options.steps == 0) throw VaeError("local_train: steps must be at least 1");
  if (options.batch_size == 0) throw VaeError("local_train: batch size must be positive");
  if (!(options.learning_rate >= 0.0) || !std::isfinite(options.learning_rate)) {
    throw VaeError("local_train: learning rate must be finite and nonnegative");
  }
  const bool full = options.batch_size >= n;
  const std::size_t m = full ? n : options.batch_size;

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng shuffle_rng = make_rng(options.seed, {0x73687566ULL});
  if (!full) std::shuffle(perm.begin(), perm.end(), shuffle_rng);
  std::size_t pos = 0;

  LocalTrainResult out;
  out.params = start;
  out.delta = start.zeros_like();
  for (std::size_t step = 0; step < options.steps; ++step) {
    if (!full && pos + m > n) {
      std::shuffle(perm.begin(), perm.end(), shuffle_rng);
      pos = 0;
    }
    const std::span<const std::size_t> cells(perm.data() + pos, m);
    pos += m;
    const Batch batch = gather_batch(data, cells);
    const MatrixXd noise = step_noise(options.seed, step, start.config().latent_dim, m);
    auto lg = loss_and_grad(out.params, batch, noise, options.lambda);
    out.last_loss = lg.loss;
    out.delta.values() -= options.learning_rate * lg.grad.values();
    out.params.values() = start.values() + out.delta.values();
    if (!out.params.all_finite()) {
      throw VaeError("local_train: non-finite parameters at step " + std::to_string(step));
    }
  }
  return out;
}

Eigen::MatrixXd embed(const VaeParams& params, const TrainingData& data, std::size_t chunk) {
  if (chunk == 0) chunk = 512;
  const auto n = static_cast<Eigen::Index>(data.n());
  MatrixXd mu(static_cast<Eigen::Index>(params.config().latent_dim), n);
  for (Eigen::Index k = 0; k < n; k += static_cast<Eigen::Index>(chunk)) {
    const Eigen::Index len = std::min<Eigen::Index>(static_cast<Eigen::Index>(chunk), n - k);
    const SpMat block = data.x.middleCols(k, len);
    mu.middleCols(k, len) = run_encoder(params, block).mu;
  }
  return mu;
}

// --- Checkpoints -------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

constexpr const char* kCheckpointFormat = "fedlev-vae-params";

nlohmann::json config_json(const VaeConfig& c) {
  return {{"input_dim", c.input_dim},
          {"block_sizes", c.block_sizes},
          {"block_hidden", c.block_hidden},
          {"trunk_hidden", c.trunk_hidden},
          {"latent_dim", c.latent_dim},
          {"confounder_dim", c.confounder_dim},
          {"lambda", c.lambda},
          {"likelihood", likelihood_name(c.likelihood)}};
}

VaeConfig config_from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.block_sizes = j.at("block_sizes").get<std::vector<std::size_t>>();
  c.block_hidden = j.at("block_hidden").get<std::size_t>();
  c.trunk_hidden = j.at("trunk_hidden").get<std::size_t>();
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.confounder_dim = j.at("confounder_dim").get<std::size_t>();
  c.lambda = j.at("lambda").get<double>();
  c.likelihood = parse_likelihood(j.at("likelihood").get<std::string>());
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const VaeParams& params) {
  nlohmann::json header;
  header["format"] = kCheckpointFormat;
  header["version"] = 1;
  header["config"] = config_json(params.config());
  header["count"] = params.size();
  auto& tensors = header["tensors"] = nlohmann::json::array();
  for (const auto& t : params.layout().tensors()) {
    tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw VaeError("checkpoint: cannot open " + path.string() + " for writing");
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(params.values().data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!out) throw VaeError("checkpoint: write failed for " + path.string());
}

VaeParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VaeError("checkpoint: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw VaeError("checkpoint: missing header in " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw VaeError("checkpoint: malformed header: " + std::string(e.what()));
  }
  if (header.value("format", "") != kCheckpointFormat) throw VaeError("checkpoint: unrecognised format");
  VaeParams params(config_from_json(header.at("config")));
  const auto count = header.at("count").get<std::size_t>();
  if (count != params.size()) throw VaeError("checkpoint: parameter count does not match the config");
  const auto& tensors = header.at("tensors");
  const auto& layout = params.layout().tensors();
  if (tensors.size() != layout.size()) throw VaeError("checkpoint: tensor list does not match the config");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (tensors[i].at("name") != layout[i].name || tensors[i].at("rows") != layout[i].rows ||
        tensors[i].at("cols") != layout[i].cols) {
      throw VaeError("checkpoint: tensor " + layout[i].name + " has an unexpected shape");
    }
  }
  in.read(reinterpret_cast<char*>(params.values().data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
    throw VaeError("checkpoint: truncated parameter data");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw VaeError("checkpoint: trailing data");
  if (!params.all_finite()) throw VaeError("checkpoint: non-finite parameters");
  return params;
}

}  // namespace fedlev
