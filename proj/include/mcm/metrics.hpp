#pragma once

#include <vector>

#include "mcm/tensor.hpp"

namespace mcm {

struct LabelMask {
  int h = 0, w = 0;
  std::vector<int> labels;  // row-major, 0 = background
};

// 2|A∩B| / (|A|+|B|) for one class id; both-empty pairs score 1.0.
double dice(const LabelMask& a, const LabelMask& b, int label);

// phi [2, H, W] -> [H-2, W-2] determinant of J = I + grad(u), central
// differences at interior pixels. Evaluation only, no gradient graph.
TensorPtr jacobian_det(const TensorPtr& phi);

struct JacobianStats {
  double neg_pct = 0.0;       // percent of interior pixels with det <= 0
  double mean_abs_jm1 = 0.0;  // mean |det - 1|
};
JacobianStats jacobian_metrics(const TensorPtr& phi);

// One-hot warp of an integer mask by phi; ties resolve to the lowest label id.
LabelMask warp_labels(const LabelMask& mask, const TensorPtr& phi);

// Mean Euclidean norm of phi - gt, over nonzero mask pixels when given.
double endpoint_error(const TensorPtr& phi, const TensorPtr& gt,
                      const LabelMask* mask = nullptr);

struct TemporalConsistency {
  std::vector<double> curve;  // mean displacement magnitude per frame
  double tc_index = 0.0;      // mean second temporal difference magnitude
};
TemporalConsistency temporal_consistency(const std::vector<TensorPtr>& fields);

}  // namespace mcm
