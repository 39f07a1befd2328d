#pragma once

// Central finite-difference verification of the analytic loss gradients.
// Instances that land within 10*eps of a hinge kink are resampled, never
// asserted. The report is also emitted as JSON by the CLI.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "higen/errors.hpp"
#include "higen/nn.hpp"
#include "higen/objectives.hpp"
#include "higen/rng.hpp"

namespace higen {

struct GradCheckConfig {
  int points = 50;
  double eps = 1e-4;
  double tolerance = 1e-4;  // relative
  uint64_t seed = 7;
};

struct GradCheckEntry {
  std::string name;
  int points = 0;
  double max_rel_err = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double eps = 0;
  double tolerance = 0;

  bool all_pass() const {
    for (const auto& e : entries)
      if (!e.pass) return false;
    return !entries.empty();
  }
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["eps"] = eps;
    j["tolerance"] = tolerance;
    j["all_pass"] = all_pass();
    j["losses"] = nlohmann::json::array();
    for (const auto& e : entries) {
      j["losses"].push_back({{"name", e.name},
                             {"points", e.points},
                             {"max_rel_err", e.max_rel_err},
                             {"pass", e.pass}});
    }
    return j;
  }
};

namespace gradcheck_detail {

inline void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NonFinite("non-finite value in " + what);
}

// Near-zero coordinates are compared against an absolute floor so that
// finite-difference roundoff on true-zero gradients does not register as a
// relative error.
inline double rel_err(double analytic, double fd) {
  double scale = std::max({std::abs(analytic), std::abs(fd), 1e-3});
  return std::abs(analytic - fd) / scale;
}

// Central differences of f over every coefficient of x; returns the worst
// relative deviation from the analytic gradient.
inline double fd_matrix(const std::function<double()>& f, nn::Matrix& x,
                        const nn::Matrix& analytic, double eps,
                        const std::string& what) {
  double worst = 0;
  for (long c = 0; c < x.cols(); ++c) {
    for (long r = 0; r < x.rows(); ++r) {
      double orig = x(r, c);
      x(r, c) = orig + eps;
      double up = f();
      x(r, c) = orig - eps;
      double down = f();
      x(r, c) = orig;
      require_finite(up, what);
      require_finite(down, what);
      double fd = (up - down) / (2 * eps);
      worst = std::max(worst, rel_err(analytic(r, c), fd));
    }
  }
  return worst;
}

inline double fd_params(const std::function<double()>& f,
                        const std::vector<nn::Tensor*>& params, double eps,
                        const std::string& what) {
  double worst = 0;
  for (auto* t : params)
    worst = std::max(worst, fd_matrix(f, t->w, t->g, eps, what));
  return worst;
}

inline DistributionTrace random_trace(Rng& rng, long k, long v) {
  DistributionTrace t;
  t.logits = nn::Matrix(k, v);
  for (long c = 0; c < v; ++c)
    for (long r = 0; r < k; ++r) t.logits(r, c) = rng.normal(0.0, 1.5);
  t.probs = nn::softmax_rows(t.logits);
  t.gold.resize(k);
  t.node_flag.resize(k);
  for (long r = 0; r < k; ++r) {
    t.gold[r] = static_cast<int>(rng.uniform_int(v));
    t.node_flag[r] = rng.bernoulli(0.6) ? 1 : 0;
  }
  t.node_flag[0] = 1;
  return t;
}

inline std::vector<std::pair<int, int>> random_edges(Rng& rng, long v, int n) {
  std::vector<std::pair<int, int>> edges;
  while (static_cast<int>(edges.size()) < n) {
    int p = static_cast<int>(rng.uniform_int(v));
    int c = static_cast<int>(rng.uniform_int(v));
    if (p != c) edges.emplace_back(p, c);
  }
  return edges;
}

}  // namespace gradcheck_detail

// Generic single-point check: `loss` recomputes the value from the current
// contents of `x`; `analytic` is d(loss)/dx at the unperturbed point.
inline double finite_difference_check(const std::function<double()>& loss,
                                      nn::Matrix& x, const nn::Matrix& analytic,
                                      double eps, const std::string& what = "loss") {
  return gradcheck_detail::fd_matrix(loss, x, analytic, eps, what);
}

inline GradCheckReport run_gradcheck(const GradCheckConfig& cfg) {
  using namespace gradcheck_detail;
  Rng rng(cfg.seed);
  GradCheckReport report;
  report.eps = cfg.eps;
  report.tolerance = cfg.tolerance;
  const long k = 4, v = 12;

  auto add_entry = [&](const std::string& name, double worst) {
    report.entries.push_back(
        {name, cfg.points, worst, worst < cfg.tolerance});
  };

  {  // language-modeling loss w.r.t. decoder logits
    double worst = 0;
    for (int pt = 0; pt < cfg.points; ++pt) {
      DistributionTrace t = random_trace(rng, k, v);
      nn::Matrix analytic = lm_loss(t).dlogits;
      auto f = [&]() {
        t.probs = nn::softmax_rows(t.logits);
        return lm_loss(t).value;
      };
      worst = std::max(worst, fd_matrix(f, t.logits, analytic, cfg.eps, "lm_loss"));
    }
    add_entry("lm_loss", worst);
  }

  {  // output-space loss w.r.t. decoder logits, resampling near the hinge
    double worst = 0;
    for (int pt = 0; pt < cfg.points; ++pt) {
      DistributionTrace t;
      std::vector<std::pair<int, int>> edges;
      for (int attempt = 0;; ++attempt) {
        t = random_trace(rng, k, v);
        edges = random_edges(rng, v, 3);
        bool safe = true;
        for (long r = 0; r < k; ++r) {
          if (!t.node_flag[r]) continue;
          for (auto& [p, c] : edges)
            if (std::abs(t.probs(r, c) - t.probs(r, p)) < 10 * cfg.eps) safe = false;
        }
        if (safe || attempt > 1000) break;
      }
      nn::Matrix analytic = output_space_loss(t, edges).dlogits;
      auto f = [&]() {
        t.probs = nn::softmax_rows(t.logits);
        return output_space_loss(t, edges).value;
      };
      worst = std::max(worst, fd_matrix(f, t.logits, analytic, cfg.eps, "output_space_loss"));
    }
    add_entry("output_space_loss", worst);
  }

  {  // token-constraint loss w.r.t. decoder logits
    double worst = 0;
    for (int pt = 0; pt < cfg.points; ++pt) {
      DistributionTrace t = random_trace(rng, k, v);
      std::vector<char> allowed(v, 0);
      for (long i = 0; i < v; ++i) allowed[i] = rng.bernoulli(0.4) ? 1 : 0;
      nn::Matrix analytic = token_constraint_loss(t, allowed).dlogits;
      auto f = [&]() {
        t.probs = nn::softmax_rows(t.logits);
        return token_constraint_loss(t, allowed).value;
      };
      worst = std::max(worst, fd_matrix(f, t.logits, analytic, cfg.eps, "token_constraint_loss"));
    }
    add_entry("token_constraint_loss", worst);
  }

  {  // semantic loss through FC_t / FC_l parameters and the pooled inputs
    double worst = 0;
    const int n = 3, d_in = 6, d_out = 4;
    const std::vector<double> alphas{0.05, 0.1};
    // The normalize-then-distance composition has a much larger third
    // derivative than the trace losses; a tighter step keeps the central
    // difference truncation error well under the tolerance.
    const double eps = cfg.eps / 10.0;
    for (int pt = 0; pt < cfg.points; ++pt) {
      nn::Projection fc_t, fc_l;
      nn::Matrix h_t, h_l0, h_l1;
      std::vector<std::vector<int>> classes;
      auto project_all = [&](nn::Matrix& et, std::vector<nn::Matrix>& el,
                             std::vector<nn::Projection::Cache>* ct,
                             std::vector<std::vector<nn::Projection::Cache>>* cl) {
        et = nn::Matrix(n, d_out);
        el.assign(2, nn::Matrix(n, d_out));
        for (int i = 0; i < n; ++i) {
          nn::Projection::Cache c;
          et.row(i) = fc_t.forward(h_t.row(i), c);
          if (ct) (*ct)[i] = c;
          el[0].row(i) = fc_l.forward(h_l0.row(i), c);
          if (cl) (*cl)[0][i] = c;
          el[1].row(i) = fc_l.forward(h_l1.row(i), c);
          if (cl) (*cl)[1][i] = c;
        }
      };
      auto value = [&]() {
        nn::Matrix et;
        std::vector<nn::Matrix> el;
        project_all(et, el, nullptr, nullptr);
        return semantic_loss(et, el, classes, alphas).value;
      };
      std::vector<nn::Tensor*> all_params;
      for (int attempt = 0;; ++attempt) {
        Rng init = rng.fork(pt * 1000 + attempt);
        fc_t.init("fc_t", d_in, d_out, init);
        fc_l.init("fc_l", d_in, d_out, init);
        auto rand_mat = [&](int rows, int cols) {
          nn::Matrix m(rows, cols);
          for (int c2 = 0; c2 < cols; ++c2)
            for (int r = 0; r < rows; ++r) m(r, c2) = init.normal(0.0, 1.0);
          return m;
        };
        h_t = rand_mat(n, d_in);
        h_l0 = rand_mat(n, d_in);
        h_l1 = rand_mat(n, d_in);
        classes.assign(n, std::vector<int>(2));
        for (int i = 0; i < n; ++i) {
          classes[i][0] = static_cast<int>(init.uniform_int(2));
          classes[i][1] = static_cast<int>(init.uniform_int(3));
        }
        // Need positives and negatives at level 0.
        classes[0][0] = classes[1][0] = 0;
        classes[2][0] = 1;

        std::vector<nn::Projection::Cache> cache_t(n);
        std::vector<std::vector<nn::Projection::Cache>> cache_l(
            2, std::vector<nn::Projection::Cache>(n));
        nn::Matrix et;
        std::vector<nn::Matrix> el;
        project_all(et, el, &cache_t, &cache_l);
        all_params.clear();
        fc_t.collect(all_params);
        fc_l.collect(all_params);

        // How far one eps-step can move any hinge argument: gradient of the
        // gamma terms with every level forced active via inflated margins.
        std::vector<double> inflated = alphas;
        for (double& a : inflated) a += 10.0;
        SemanticResult probe = semantic_loss(et, el, classes, inflated);
        for (auto* p : all_params) p->zero_grad();
        for (int i = 0; i < n; ++i) {
          fc_t.backward(probe.d_text.row(i), cache_t[i]);
          fc_l.backward(probe.d_label[0].row(i), cache_l[0][i]);
          fc_l.backward(probe.d_label[1].row(i), cache_l[1][i]);
        }
        double sensitivity = 1.0;
        for (auto* p : all_params)
          sensitivity = std::max(sensitivity, p->g.cwiseAbs().maxCoeff());

        SemanticResult res = semantic_loss(et, el, classes, alphas);
        bool safe = true;
        for (size_t lvl = 0; lvl < res.stats.size(); ++lvl) {
          const auto& st = res.stats[lvl];
          if (st.n_pos == 0 || st.n_neg == 0) continue;
          double hinge = st.gamma_pos - st.gamma_neg + alphas[lvl];
          // "Within 10*eps of the kink" along the steepest parameter direction.
          if (std::abs(hinge) < 10 * eps * sensitivity) safe = false;
        }
        if (safe && attempt <= 1000) {
          // Real analytic gradients for the comparison below.
          for (auto* p : all_params) p->zero_grad();
          for (int i = 0; i < n; ++i) {
            fc_t.backward(res.d_text.row(i), cache_t[i]);
            fc_l.backward(res.d_label[0].row(i), cache_l[0][i]);
            fc_l.backward(res.d_label[1].row(i), cache_l[1][i]);
          }
          break;
        }
        if (attempt > 1000) break;
      }
      worst = std::max(worst, fd_params(value, all_params, eps, "semantic_loss"));
    }
    add_entry("semantic_loss", worst);
  }

  {  // composite w.r.t. decoder logits with the default weights
    double worst = 0;
    LossWeights w;
    for (int pt = 0; pt < cfg.points; ++pt) {
      DistributionTrace t;
      std::vector<std::pair<int, int>> edges;
      std::vector<char> allowed(v, 0);
      for (int attempt = 0;; ++attempt) {
        t = random_trace(rng, k, v);
        edges = random_edges(rng, v, 3);
        for (long i = 0; i < v; ++i) allowed[i] = rng.bernoulli(0.4) ? 1 : 0;
        bool safe = true;
        for (long r = 0; r < k; ++r) {
          if (!t.node_flag[r]) continue;
          for (auto& [p, c] : edges)
            if (std::abs(t.probs(r, c) - t.probs(r, p)) < 10 * cfg.eps) safe = false;
        }
        if (safe || attempt > 1000) break;
      }
      TraceLoss l1 = lm_loss(t);
      TraceLoss l2 = output_space_loss(t, edges);
      TraceLoss l3 = token_constraint_loss(t, allowed);
      nn::Matrix analytic =
          l1.dlogits + w.lambda1 * l2.dlogits + w.lambda2 * l3.dlogits;
      auto f = [&]() {
        t.probs = nn::softmax_rows(t.logits);
        return composite(lm_loss(t).value, output_space_loss(t, edges).value,
                         token_constraint_loss(t, allowed).value, 0.0, w)
            .total;
      };
      worst = std::max(worst, fd_matrix(f, t.logits, analytic, cfg.eps, "composite"));
    }
    add_entry("composite", worst);
  }

  return report;
}

}  // namespace higen
