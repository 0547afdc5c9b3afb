#ifndef MMESR_STATS_HPP
#define MMESR_STATS_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mmesr
{

inline double median_of(std::vector<double> v)
{
    if (v.empty())
        throw std::invalid_argument("median_of: empty input");
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1)
        return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(v.begin(), mid);
    return 0.5 * (lower + upper);
}

/// 1.4826 * median absolute deviation (consistent sigma for Gaussian data).
inline double robust_sigma(const std::vector<double>& v)
{
    const double med = median_of(v);
    std::vector<double> dev(v.size());
    std::transform(v.begin(), v.end(), dev.begin(), [med](double x) { return std::abs(x - med); });
    return 1.4826 * median_of(std::move(dev));
}

} // namespace mmesr

#endif
