#pragma once

// Registration quality metrics (median/maximum control-point error, outcome
// classes, acceptance-rate AUC) and verification metrics (FAR/FRR sweep,
// EER, DET curve).

#include <map>
#include <string>
#include <vector>

#include "retinamatch/geometry.hpp"
#include "retinamatch/types.hpp"

namespace retina {

/// Ground-truth correspondence in native-resolution pixels.
struct ControlPair {
  double xq = 0, yq = 0;
  double xr = 0, yr = 0;
};

struct RegistrationErrors {
  double mee = 0.0;  // median of control-point errors (even count: mean of middle two)
  double mae = 0.0;  // maximum error
};

/// Errors e_k = || H(p_q,k) - p_r,k ||_2. Throws ConfigError on an empty list.
RegistrationErrors registration_errors(const Homography& H,
                                       const std::vector<ControlPair>& pairs);

enum class RegistrationOutcome { Failed, Inaccurate, Acceptable };

inline constexpr double kAcceptableMee = 20.0;  // native px
inline constexpr double kAcceptableMae = 50.0;

/// Failed when no homography was produced; Acceptable iff MEE < mee_thresh
/// AND MAE < mae_thresh (both strict); otherwise Inaccurate.
RegistrationOutcome classify_outcome(bool fitted, double mee, double mae,
                                     double mee_thresh = kAcceptableMee,
                                     double mae_thresh = kAcceptableMae);

const char* to_string(RegistrationOutcome o);

/// Step curve of the acceptance rate r(t) = fraction of pairs with MEE <= t.
struct AcceptanceCurve {
  std::vector<std::pair<double, double>> points;  // (threshold, rate)
};

inline constexpr double kDefaultAucMaxThreshold = 25.0;

/// Exact integral of the step function r(t) over [0, max_threshold], divided
/// by max_threshold. Failed pairs are passed as +infinity. Throws
/// ConfigError on an empty list.
double acceptance_auc(const std::vector<double>& mee_values, double max_threshold,
                      AcceptanceCurve* curve = nullptr);

/// Mean of per-category AUCs (e.g., the FIRE S/P/A split).
double mean_auc(const std::map<std::string, std::vector<double>>& by_category,
                double max_threshold);

struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

struct DetPoint {
  double threshold = 0.0;
  double far = 0.0;  // fraction of impostors with score >= threshold
  double frr = 0.0;  // fraction of genuines with score < threshold
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;  // operating point of the crossing
  std::vector<DetPoint> curve;
  bool polarity_warning = false;  // median(genuine) < median(impostor)
};

/// Sweeps every distinct score threshold; the EER is taken at the FAR/FRR
/// crossing, linearly interpolating between adjacent thresholds when no
/// exact crossing exists. Throws ConfigError when either list is empty.
EerResult compute_eer(const ScoreSet& scores);

}  // namespace retina
