#include "fedlev/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "fedlev/random.hpp"

namespace fedlev {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

VectorXd pinv_solve(const MatrixXd& m, const VectorXd& y) {
  Eigen::BDCSVD<MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return VectorXd::Zero(m.cols());
  Eigen::Index r = 0;
  while (r < sv.size() && sv(r) > kRankTolerance * sv(0)) ++r;
  const VectorXd coef = (svd.matrixU().leftCols(r).transpose() * y).cwiseQuotient(sv.head(r));
  return svd.matrixV().leftCols(r) * coef;
}

Eigen::MatrixXd sampled_basis(const RowSpace& rs, const FeatureSample& sample) {
  MatrixXd w(static_cast<Eigen::Index>(sample.size()), rs.basis.cols());
  for (std::size_t m = 0; m < sample.size(); ++m) {
    const auto k = static_cast<Eigen::Index>(m);
    w.row(k) = sample.scale(k) * rs.basis.row(sample.selected[m]);
  }
  return w;
}

VectorXd sampling_probabilities(const RowSpace& rs, std::size_t d, bool uniform) {
  if (uniform) return uniform_probabilities(d);
  const VectorXd l = exact_column_leverage(rs).scores;
  return l / l.sum();
}

std::vector<int> distinct(std::span<const int> labels) {
  std::vector<int> c(labels.begin(), labels.end());
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

}  // namespace

void PropertyResult::record(TrialStatus s, std::uint64_t seed, double violation, double value) {
  ++trials;
  switch (s) {
    case TrialStatus::Success: ++successes; break;
    case TrialStatus::Failure: ++failures; break;
    case TrialStatus::NotApplicable: ++not_applicable; break;
  }
  if (s != TrialStatus::NotApplicable) worst_violation = std::max(worst_violation, std::max(0.0, violation));
  seeds.push_back(seed);
  status.push_back(s);
  measure.push_back(s == TrialStatus::NotApplicable ? kNaN : value);
}

void PropertyResult::merge(const PropertyResult& other) {
  trials += other.trials;
  successes += other.successes;
  failures += other.failures;
  not_applicable += other.not_applicable;
  worst_violation = std::max(worst_violation, other.worst_violation);
  seeds.insert(seeds.end(), other.seeds.begin(), other.seeds.end());
  status.insert(status.end(), other.status.begin(), other.status.end());
  measure.insert(measure.end(), other.measure.begin(), other.measure.end());
}

bool PropertyResult::audited() const {
  return successes + failures + not_applicable == trials && seeds.size() == trials && status.size() == trials &&
         measure.size() == trials;
}

// --- Generators --------------------------------------------------------------

Eigen::MatrixXd random_low_rank(std::size_t n, std::size_t d, std::size_t rank, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x6c6f7772616e6bULL});
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd g1(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rank));
  MatrixXd g2(static_cast<Eigen::Index>(rank), static_cast<Eigen::Index>(d));
  for (Eigen::Index k = 0; k < g1.size(); ++k) g1.data()[k] = normal(rng);
  for (Eigen::Index k = 0; k < g2.size(); ++k) g2.data()[k] = normal(rng);
  return g1 * g2;
}

LabeledInstance planted_classes(std::size_t per_class, std::size_t d, std::size_t noise_rank, double separation,
                                std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x706c616e746564ULL});
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto dd = static_cast<Eigen::Index>(d);
  MatrixXd means(3, dd);
  for (Eigen::Index k = 0; k < means.size(); ++k) means.data()[k] = separation * normal(rng);
  const auto n = static_cast<Eigen::Index>(3 * per_class);
  MatrixXd coeff(n, static_cast<Eigen::Index>(noise_rank));
  MatrixXd dirs(static_cast<Eigen::Index>(noise_rank), dd);
  for (Eigen::Index k = 0; k < coeff.size(); ++k) coeff.data()[k] = normal(rng);
  for (Eigen::Index k = 0; k < dirs.size(); ++k) dirs.data()[k] = normal(rng);
  LabeledInstance out;
  out.a = coeff * dirs;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(i / static_cast<Eigen::Index>(per_class));
    out.a.row(i) += means.row(c);
    out.labels.push_back(c);
  }
  return out;
}

// --- Least squares -----------------------------------------------------------

PropertyResult verify_lsq_reconstruction(const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                                         const FeatureSample& sample, std::uint64_t seed) {
  PropertyResult res;
  res.name = "lsq_reconstruction";
  if (y.size() != a.rows()) throw LeverageError("lsq: y length must equal the row count of A");
  const RowSpace rs = row_space(a);
  const MatrixXd w = sampled_basis(rs, sample);
  Eigen::JacobiSVD<MatrixXd> svd_w(w);
  const VectorXd& sw = svd_w.singularValues();
  const bool full_rank = sw.size() == static_cast<Eigen::Index>(rs.rank()) && sw(0) > 0.0 &&
                         sw(sw.size() - 1) > kRankTolerance * sw(0);
  if (!full_rank) {
    res.record(TrialStatus::NotApplicable, seed);
    res.note = "T^T V is rank deficient";
    return res;
  }
  const MatrixXd at = apply_sample(a, sample, true);
  const VectorXd w_star = pinv_solve(a, y);
  const VectorXd w_sub = pinv_solve(at, y);
  const double r_star = (a * w_star - y).squaredNorm();
  const double r_recon = (at * w_sub - y).squaredNorm();
  // Relative to the optimal residual, floored for y inside the column space.
  const double gap = std::abs(r_recon - r_star) / std::max(r_star, 1e-12 * y.squaredNorm());
  res.record(gap <= 1e-8 ? TrialStatus::Success : TrialStatus::Failure, seed, gap, gap);
  return res;
}

// --- Gradient sandwich -------------------------------------------------------

PropertyResult verify_gradient_sandwich(const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                                        const FeatureSample& sample, double eps_hat, std::size_t probes,
                                        std::uint64_t seed) {
  PropertyResult res;
  res.name = "gradient_sandwich";
  if (y.size() != a.rows()) throw LeverageError("gradient sandwich: y length must equal the row count of A");
  const MatrixXd at = apply_sample(a, sample, true);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t p = 0; p < probes; ++p) {
    const std::uint64_t ps = derive_seed(seed, {p});
    if (!(eps_hat < 1.0)) {
      res.record(TrialStatus::NotApplicable, ps);
      continue;
    }
    Rng rng(ps);
    VectorXd wt(at.cols());
    for (Eigen::Index k = 0; k < wt.size(); ++k) wt(k) = normal(rng);
    const VectorXd r = at * wt - y;
    const double full = (2.0 * (a.transpose() * r)).squaredNorm();
    const double sub = (2.0 * (at.transpose() * r)).squaredNorm();
    const double lo = (1.0 - eps_hat) * full * (1.0 - kInequalitySlack);
    const double hi = (1.0 + eps_hat) * full * (1.0 + kInequalitySlack);
    const double viol = full > 0.0 ? std::max({0.0, lo - sub, sub - hi}) / full : 0.0;
    res.record(sub >= lo && sub <= hi ? TrialStatus::Success : TrialStatus::Failure, ps, viol,
               full > 0.0 ? sub / full : 1.0);
  }
  return res;
}

// --- Structure preservation --------------------------------------------------

namespace {

template <typename Check>
PropertyResult structure_trials(const Eigen::MatrixXd& a, std::span<const int> labels, const StructureOptions& o,
                                const char* name, Check&& check) {
  if (static_cast<std::size_t>(a.rows()) != labels.size()) throw MetricError("labels must match the rows of A");
  if (distinct(labels).size() < 2) throw MetricError("need at least two labeled classes");
  const auto d = static_cast<std::size_t>(a.cols());
  const std::size_t s = o.s == 0 ? d : o.s;
  PropertyResult res;
  res.name = name;
  const RowSpace rs = row_space(a);
  const VectorXd p = sampling_probabilities(rs, d, o.uniform);
  for (std::size_t t = 0; t < o.trials; ++t) {
    const std::uint64_t ts = derive_seed(o.seed, {t});
    const FeatureSample sample = sample_without_replacement(p, s, ts);
    const double eps = check_subspace_embedding(rs, sample);
    const MatrixXd at = apply_sample(a, sample, true);
    check(res, at, eps, ts);
  }
  return res;
}

}  // namespace

PropertyResult verify_separability_preservation(const Eigen::MatrixXd& a, std::span<const int> labels,
                                                const StructureOptions& options) {
  const auto classes = distinct(labels);
  std::vector<std::pair<int, int>> pairs;
  std::vector<double> delta;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      const double v = separability(a, labels, classes[i], classes[j]);
      if (std::isfinite(v) && v >= kSeparabilityFloor) {
        pairs.emplace_back(classes[i], classes[j]);
        delta.push_back(v);
      }
    }
  }
  auto res = structure_trials(a, labels, options, "separability_preservation",
                              [&](PropertyResult& r, const MatrixXd& at, double eps, std::uint64_t ts) {
                                if (pairs.empty()) {
                                  r.record(TrialStatus::NotApplicable, ts);
                                  return;
                                }
                                double worst = 0.0;
                                for (std::size_t k = 0; k < pairs.size(); ++k) {
                                  const double v = separability(at, labels, pairs[k].first, pairs[k].second);
                                  const double lo = (1.0 - 2.0 * eps) * delta[k] * (1.0 - kInequalitySlack);
                                  const double hi = (1.0 + 2.0 * eps) * delta[k] * (1.0 + kInequalitySlack);
                                  const double viol = std::isfinite(v) ? std::max({0.0, lo - v, v - hi}) / delta[k]
                                                                       : std::numeric_limits<double>::infinity();
                                  worst = std::max(worst, viol);
                                }
                                r.record(worst == 0.0 ? TrialStatus::Success : TrialStatus::Failure, ts, worst, eps);
                              });
  res.note = "pairs with Delta < 1e-6 are not tested; band uses the measured distortion of each sample";
  return res;
}

PropertyResult verify_db_preservation(const Eigen::MatrixXd& a, std::span<const int> labels,
                                      const StructureOptions& options) {
  const double db = davies_bouldin(a, labels);
  auto res = structure_trials(a, labels, options, "db_preservation",
                              [&](PropertyResult& r, const MatrixXd& at, double eps, std::uint64_t ts) {
                                if (!std::isfinite(db) || db == 0.0) {
                                  r.record(TrialStatus::NotApplicable, ts);
                                  return;
                                }
                                const double v = davies_bouldin(at, labels);
                                if (!std::isfinite(v)) {
                                  r.record(TrialStatus::NotApplicable, ts);
                                  return;
                                }
                                const double allowed = 2.0 * eps * db * (1.0 + kInequalitySlack) +
                                                       kInequalitySlack * db;
                                const double gap = std::abs(v - db);
                                r.record(gap <= allowed ? TrialStatus::Success : TrialStatus::Failure, ts,
                                         std::max(0.0, gap - allowed) / db, eps);
                              });
  res.note = "centroid distances below 1e-9 make DB undefined; such trials are not applicable";
  return res;
}

// --- Marker inclusion --------------------------------------------------------

MarkerInclusion estimate_marker_inclusion(const Eigen::MatrixXd& a, std::span<const int> labels,
                                          std::size_t feature, std::size_t s, std::size_t trials,
                                          std::uint64_t seed, int cls) {
  if (static_cast<std::size_t>(a.rows()) != labels.size()) throw MetricError("labels must match the rows of A");
  if (feature >= static_cast<std::size_t>(a.cols())) throw MetricError("marker feature out of range");
  if (trials == 0) throw MetricError("marker: trials must be positive");
  const auto classes = distinct(labels);
  if (classes.size() < 2) throw MetricError("marker: need at least two classes");
  const auto j = static_cast<Eigen::Index>(feature);

  auto class_mean = [&](int c, bool inside) {
    VectorXd sum = VectorXd::Zero(a.cols());
    std::size_t n = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
      if ((labels[r] == c) == inside) {
        sum += a.row(static_cast<Eigen::Index>(r)).transpose();
        ++n;
      }
    }
    return VectorXd(sum / static_cast<double>(n));
  };
  if (cls < 0) {
    double best = -std::numeric_limits<double>::infinity();
    for (int c : classes) {
      const double m = class_mean(c, true)(j);
      if (m > best) {
        best = m;
        cls = c;
      }
    }
  } else if (!std::binary_search(classes.begin(), classes.end(), cls)) {
    throw MetricError("marker: class " + std::to_string(cls) + " has no rows");
  }
  const VectorXd contrast = class_mean(cls, true) - class_mean(cls, false);
  const double mass = contrast.squaredNorm();
  if (!(mass > 0.0)) throw MetricError("marker: zero total discriminative mass");

  const RowSpace rs = row_space(a);
  const VectorXd l = exact_column_leverage(rs).scores;
  const VectorXd p = l / l.sum();
  const double r = static_cast<double>(rs.rank());

  MarkerInclusion out;
  out.feature = feature;
  out.cls = cls;
  out.s = s;
  out.trials = trials;
  out.floor = 1.0 - std::exp(-(static_cast<double>(s) / r) * contrast(j) * contrast(j) / mass);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto sample = sample_without_replacement(p, s, derive_seed(seed, {t}));
    if (std::binary_search(sample.selected.begin(), sample.selected.end(),
                           static_cast<SparseBinaryMatrix::Index>(feature))) {
      ++out.hits;
    }
  }
  out.pi_hat = static_cast<double>(out.hits) / static_cast<double>(trials);
  out.sigma_hat = std::sqrt(out.pi_hat * (1.0 - out.pi_hat) / static_cast<double>(trials));
  out.success = out.pi_hat >= out.floor - 3.0 * out.sigma_hat;
  return out;
}

// --- Loss decomposition ------------------------------------------------------

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

DecompositionReport verify_error_decomposition(const ScenarioData& data, std::span<const double> rhos,
                                               std::span<const std::uint64_t> seeds, const FedConfig& base,
                                               double band, std::size_t workers) {
  if (rhos.empty() || seeds.empty()) throw FedError("decomposition: need at least one rho and one seed");
  DecompositionReport rep;
  rep.band_width = band;
  rep.monotone.name = "loss_monotone";
  rep.band.name = "final_loss_band";
  for (double rho : rhos) {
    for (auto seed : seeds) {
      FedConfig cfg = base;
      cfg.rho = rho;
      cfg.seed = seed;
      DecompositionRun run;
      run.rho = rho;
      run.seed = seed;
      try {
        const auto fr = run_federated(data.shards, cfg, workers);
        run.s = fr.sample.size();
        for (const auto& h : fr.phase2.history) {
          run.total.push_back(h.probe.total);
          run.recon_per_feature.push_back(h.probe.recon / static_cast<double>(run.s));
        }
        run.diverged = std::any_of(run.total.begin(), run.total.end(), [](double v) { return !std::isfinite(v); });
      } catch (const FedError&) {
        run.diverged = true;
      }
      rep.runs.push_back(std::move(run));
    }
  }

  auto runs_at = [&](double rho) {
    std::vector<const DecompositionRun*> out;
    for (const auto& r : rep.runs) {
      if (r.rho == rho) out.push_back(&r);
    }
    return out;
  };
  double baseline = kNaN;
  for (double rho : rhos) {
    const auto rs = runs_at(rho);
    const std::uint64_t tag = derive_seed(0, {static_cast<std::uint64_t>(std::llround(rho * 1e6))});
    if (std::any_of(rs.begin(), rs.end(), [](const DecompositionRun* r) { return r->diverged; })) {
      rep.monotone.record(TrialStatus::Failure, tag, std::numeric_limits<double>::infinity(), kNaN);
      continue;
    }
    const std::size_t rounds = rs.front()->total.size();
    std::vector<double> med(rounds);
    std::vector<double> final_recon;
    for (std::size_t t = 0; t < rounds; ++t) {
      std::vector<double> v;
      for (const auto* r : rs) v.push_back(r->total[t]);
      med[t] = median(v);
    }
    for (const auto* r : rs) final_recon.push_back(r->recon_per_feature.back());
    double worst = std::max(0.0, med.back() - med.front()) / std::abs(med.front());
    for (std::size_t t = 3; t < rounds; ++t) {
      worst = std::max(worst, (med[t] - 1.05 * med[t - 1]) / std::abs(med[t - 1]));
    }
    rep.monotone.record(worst <= 0.0 && med.back() < med.front() ? TrialStatus::Success : TrialStatus::Failure, tag,
                        worst, med.back());
    if (rho == 1.0) baseline = median(final_recon);
  }
  for (double rho : rhos) {
    if (rho == 1.0) continue;
    const auto rs = runs_at(rho);
    const std::uint64_t tag = derive_seed(0, {static_cast<std::uint64_t>(std::llround(rho * 1e6))});
    const bool diverged = std::any_of(rs.begin(), rs.end(), [](const DecompositionRun* r) { return r->diverged; });
    if (!std::isfinite(baseline) || diverged) {
      rep.band.record(TrialStatus::NotApplicable, tag);
      continue;
    }
    std::vector<double> final_recon;
    for (const auto* r : rs) final_recon.push_back(r->recon_per_feature.back());
    const double rel = std::abs(median(final_recon) - baseline) / baseline;
    rep.band.record(rel <= band ? TrialStatus::Success : TrialStatus::Failure, tag, std::max(0.0, rel - band), rel);
  }
  rep.band.note = "per-feature probe reconstruction loss relative to rho = 1";
  return rep;
}

// --- Suites ------------------------------------------------------------------

std::vector<std::string_view> suite_names() {
  return {"embedding", "lsq", "gradsandwich", "separability", "db", "marker", "decomposition"};
}

namespace {

PropertyResult suite_embedding(std::size_t trials, std::uint64_t seed) {
  PropertyResult res;
  res.name = "embedding";
  const std::size_t rank = 10;
  const std::size_t s = embedding_sample_size(rank, 0.5, 0.05);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t ts = derive_seed(seed, {t});
    const MatrixXd a = random_low_rank(100, 4000, rank, ts);
    const RowSpace rs = row_space(a);
    const auto sample = sample_without_replacement(sampling_probabilities(rs, 4000, false), s, ts);
    const double eps = check_subspace_embedding(rs, sample);
    res.record(eps <= 0.5 ? TrialStatus::Success : TrialStatus::Failure, ts, std::max(0.0, eps - 0.5), eps);
  }
  res.note = "rank 10, 100 x 4000, s = " + std::to_string(s) + " (eps 0.5, delta 0.05), exact-leverage sampling";
  return res;
}

PropertyResult suite_lsq(std::size_t trials, std::uint64_t seed) {
  PropertyResult res;
  res.name = "lsq";
  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t ts = derive_seed(seed, {t});
    const MatrixXd a = random_low_rank(50, 500, 5, ts);
    Rng rng = make_rng(ts, {0x79ULL});
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd y(50);
    for (Eigen::Index k = 0; k < y.size(); ++k) y(k) = normal(rng);
    const RowSpace rs = row_space(a);
    const auto sample = sample_without_replacement(sampling_probabilities(rs, 500, false), 60, ts);
    res.merge(verify_lsq_reconstruction(a, y, sample, ts));
  }
  res.note = "rank 5, 50 x 500, s = 60";
  return res;
}

PropertyResult suite_gradsandwich(std::size_t instances, std::uint64_t seed) {
  PropertyResult res;
  res.name = "gradsandwich";
  for (std::size_t t = 0; t < instances; ++t) {
    const std::uint64_t ts = derive_seed(seed, {t});
    const std::size_t rank = 5 + t % 6;
    const MatrixXd a = random_low_rank(60, 800, rank, ts);
    Rng rng = make_rng(ts, {0x79ULL});
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd y(60);
    for (Eigen::Index k = 0; k < y.size(); ++k) y(k) = normal(rng);
    const RowSpace rs = row_space(a);
    const auto sample = sample_without_replacement(sampling_probabilities(rs, 800, false), 40 * rank, ts);
    const double eps = check_subspace_embedding(rs, sample);
    res.merge(verify_gradient_sandwich(a, y, sample, eps, 50, ts));
  }
  res.note = "rank 5-10, 60 x 800, s = 40 r, 50 probes per instance";
  return res;
}

LabeledInstance suite_planted(std::uint64_t seed) { return planted_classes(30, 1000, 3, 1.0, seed); }

PropertyResult suite_separability(std::size_t trials, std::uint64_t seed) {
  const auto inst = suite_planted(seed);
  const std::size_t r = row_space(inst.a).rank();
  auto res = verify_separability_preservation(inst.a, inst.labels, {embedding_sample_size(r, 0.5, 0.05), trials, seed, false});
  res.name = "separability";
  return res;
}

PropertyResult suite_db(std::size_t trials, std::uint64_t seed) {
  const auto inst = suite_planted(seed);
  const std::size_t r = row_space(inst.a).rank();
  auto res = verify_db_preservation(inst.a, inst.labels, {embedding_sample_size(r, 0.5, 0.05), trials, seed, false});
  res.name = "db";
  return res;
}

PropertyResult suite_marker(std::size_t trials, std::uint64_t seed) {
  SynthParams p;
  p.n_types = 3;
  p.d = 2000;
  p.peaks_per_type = 100;
  p.shared_peaks = 100;
  p.snr = 0.9;
  p.depth_mean = 100.0;
  p.type_counts = {100, 100, 100};
  p.seed = seed;
  const auto data = generate(p);
  const MatrixXd a = data.matrix.to_dense();
  std::vector<int> labels;
  for (const auto& c : data.cells) labels.push_back(c.label);
  const std::size_t s = p.d / 5;
  PropertyResult res;
  res.name = "marker";
  const std::size_t marker = p.type_block_begin(0);
  const std::size_t background = p.d - 1;
  for (auto j : {marker, background}) {
    const auto m = estimate_marker_inclusion(a, labels, j, s, trials, derive_seed(seed, {j}));
    res.record(m.success ? TrialStatus::Success : TrialStatus::Failure, derive_seed(seed, {j}),
               std::max(0.0, m.floor - 3.0 * m.sigma_hat - m.pi_hat), m.pi_hat);
  }
  res.note = "feature " + std::to_string(marker) + " (type-0 peak) and " + std::to_string(background) +
             " (background); s = d / 5; measure = inclusion frequency";
  return res;
}

PropertyResult suite_decomposition(std::size_t seeds_n, std::uint64_t seed) {
  SynthParams base;
  base.d = 2000;
  base.peaks_per_type = 100;
  base.shared_peaks = 100;
  base.depth_mean = 300.0;
  base.seed = seed;
  const auto data = build_scenario(make_preset(Scenario::Homogeneous, base), 0.05, base);
  FedConfig cfg;
  cfg.rounds = 8;
  cfg.local_steps = 5;
  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < seeds_n; ++k) seeds.push_back(derive_seed(seed, {k}));
  const std::vector<double> rhos{0.2, 0.5, 1.0};
  auto rep = verify_error_decomposition(data, rhos, seeds, cfg);
  PropertyResult res = rep.monotone;
  res.merge(rep.band);
  res.name = "decomposition";
  res.note = "homogeneous, 5% scale, d = 2000; monotone check per rho then band check per rho < 1 (band 0.25)";
  return res;
}

}  // namespace

double suite_required_rate(std::string_view suite) {
  if (suite == "embedding" || suite == "separability" || suite == "db") return 0.95;
  return 1.0;
}

bool suite_passed(const PropertyResult& result, double required_rate) {
  if (!result.audited() || result.applicable() == 0) return false;
  return static_cast<double>(result.successes) >= required_rate * static_cast<double>(result.applicable()) - 1e-12;
}

PropertyResult run_suite(std::string_view suite, std::size_t trials, std::uint64_t seed) {
  if (suite == "embedding") return suite_embedding(trials ? trials : 100, seed);
  if (suite == "lsq") return suite_lsq(trials ? trials : 20, seed);
  if (suite == "gradsandwich") return suite_gradsandwich(trials ? trials : 20, seed);
  if (suite == "separability") return suite_separability(trials ? trials : 100, seed);
  if (suite == "db") return suite_db(trials ? trials : 100, seed);
  if (suite == "marker") return suite_marker(trials ? trials : 10000, seed);
  if (suite == "decomposition") return suite_decomposition(trials ? trials : 3, seed);
  throw std::invalid_argument("unknown verify suite '" + std::string(suite) + "'");
}

}  // namespace fedlev
