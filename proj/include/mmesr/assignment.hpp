#ifndef MMESR_ASSIGNMENT_HPP
#define MMESR_ASSIGNMENT_HPP

#include <Eigen/Core>

#include <vector>

namespace mmesr
{

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method,
/// O(n^3)). Returns row_to_col[i] = column assigned to row i.
std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost);

} // namespace mmesr

#endif
