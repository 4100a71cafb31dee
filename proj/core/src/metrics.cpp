#include "retinamatch/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace retina {

RegistrationErrors registration_errors(const Homography& H,
                                       const std::vector<ControlPair>& pairs) {
  if (pairs.empty()) throw ConfigError("registration_errors: empty control-point list");
  std::vector<double> e;
  e.reserve(pairs.size());
  for (const auto& cp : pairs) {
    const Eigen::Vector2d p = H.apply(cp.xq, cp.yq);
    e.push_back(std::hypot(p.x() - cp.xr, p.y() - cp.yr));
  }
  std::sort(e.begin(), e.end());
  RegistrationErrors out;
  const size_t n = e.size();
  out.mee = n % 2 ? e[n / 2] : 0.5 * (e[n / 2 - 1] + e[n / 2]);
  out.mae = e.back();
  return out;
}

RegistrationOutcome classify_outcome(bool fitted, double mee, double mae, double mee_thresh,
                                     double mae_thresh) {
  if (!fitted) return RegistrationOutcome::Failed;
  if (mee < mee_thresh && mae < mae_thresh) return RegistrationOutcome::Acceptable;
  return RegistrationOutcome::Inaccurate;
}

const char* to_string(RegistrationOutcome o) {
  switch (o) {
    case RegistrationOutcome::Failed:
      return "Failed";
    case RegistrationOutcome::Inaccurate:
      return "Inaccurate";
    case RegistrationOutcome::Acceptable:
      return "Acceptable";
  }
  return "?";
}

double acceptance_auc(const std::vector<double>& mee_values, double max_threshold,
                      AcceptanceCurve* curve) {
  if (mee_values.empty()) throw ConfigError("acceptance_auc: empty error list");
  if (max_threshold <= 0) throw ConfigError("acceptance_auc: max_threshold must be positive");
  const double N = double(mee_values.size());

  // r(t) jumps by 1/N at every error value; the exact integral over [0, T]
  // is the sum of (T - e) over errors e <= T.
  double integral = 0.0;
  for (double e : mee_values) {
    if (e <= max_threshold) integral += (max_threshold - e) / N;
  }
  const double auc = integral / max_threshold;

  if (curve) {
    std::vector<double> sorted(mee_values);
    std::sort(sorted.begin(), sorted.end());
    curve->points.clear();
    size_t accepted = 0;
    while (accepted < sorted.size() && sorted[accepted] <= 0.0) ++accepted;
    curve->points.emplace_back(0.0, double(accepted) / N);
    for (size_t i = accepted; i < sorted.size() && sorted[i] <= max_threshold; ++i)
      curve->points.emplace_back(sorted[i], double(i + 1) / N);
    curve->points.emplace_back(max_threshold,
                               curve->points.empty() ? 0.0 : curve->points.back().second);
  }
  return auc;
}

double mean_auc(const std::map<std::string, std::vector<double>>& by_category,
                double max_threshold) {
  if (by_category.empty()) throw ConfigError("mean_auc: no categories");
  double sum = 0.0;
  for (const auto& [name, errs] : by_category) sum += acceptance_auc(errs, max_threshold);
  return sum / double(by_category.size());
}

namespace {

double fraction_ge(const std::vector<double>& sorted, double tau) {
  // fraction of entries >= tau
  const auto it = std::lower_bound(sorted.begin(), sorted.end(), tau);
  return double(sorted.end() - it) / double(sorted.size());
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

EerResult compute_eer(const ScoreSet& scores) {
  if (scores.genuine.empty() || scores.impostor.empty())
    throw ConfigError("compute_eer: both score lists must be nonempty");
  std::vector<double> gen(scores.genuine), imp(scores.impostor);
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());

  // Candidate thresholds: one below every score, every distinct score, one
  // above the max. FAR falls from 1 to 0, FRR climbs from 0 to 1.
  std::vector<double> taus;
  taus.push_back(std::min(gen.front(), imp.front()) - 1.0);
  {
    std::vector<double> all;
    all.reserve(gen.size() + imp.size());
    all.insert(all.end(), gen.begin(), gen.end());
    all.insert(all.end(), imp.begin(), imp.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    taus.insert(taus.end(), all.begin(), all.end());
  }
  taus.push_back(std::max(gen.back(), imp.back()) + 1.0);

  EerResult out;
  out.polarity_warning = median_of(scores.genuine) < median_of(scores.impostor);
  out.curve.reserve(taus.size());
  for (double tau : taus) {
    DetPoint p;
    p.threshold = tau;
    p.far = fraction_ge(imp, tau);
    p.frr = 1.0 - fraction_ge(gen, tau);
    out.curve.push_back(p);
  }

  // Find the first sign change of FAR - FRR and interpolate the crossing.
  for (size_t i = 0; i < out.curve.size(); ++i) {
    const double diff = out.curve[i].far - out.curve[i].frr;
    if (diff == 0.0) {
      out.eer = out.curve[i].far;
      out.threshold = out.curve[i].threshold;
      return out;
    }
    if (diff < 0.0) {
      if (i == 0) {  // FRR already above FAR at the lowest threshold
        out.eer = 0.5 * (out.curve[i].far + out.curve[i].frr);
        out.threshold = out.curve[i].threshold;
        return out;
      }
      const DetPoint& a = out.curve[i - 1];
      const DetPoint& b = out.curve[i];
      const double da = a.far - a.frr;  // > 0
      const double db = b.far - b.frr;  // < 0
      const double alpha = da / (da - db);
      out.eer = a.far + alpha * (b.far - a.far);
      out.threshold = a.threshold + alpha * (b.threshold - a.threshold);
      return out;
    }
  }
  // FAR stayed above FRR everywhere (cannot happen with the +1 sentinel,
  // where FAR = 0 and FRR = 1); return the last point defensively.
  out.eer = out.curve.back().far;
  out.threshold = out.curve.back().threshold;
  return out;
}

}  // namespace retina
