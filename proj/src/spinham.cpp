#include "mmesr/spinham.hpp"

#include "mmesr/assignment.hpp"
#include "mmesr/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mmesr
{

bool is_supported_stevens(StevensIndex idx)
{
    return std::find(std::begin(kSupportedStevens), std::end(kSupportedStevens), idx) != std::end(kSupportedStevens);
}

std::string supported_stevens_list()
{
    std::string out;
    for (const auto& idx : kSupportedStevens)
    {
        if (!out.empty())
            out += ", ";
        out += "(" + std::to_string(idx.k) + "," + std::to_string(idx.q) + ")";
    }
    return out;
}

SpinSystem::SpinSystem(HalfInteger spin, double lande_g, std::map<StevensIndex, double> stevens_hz, std::string label)
    : spin_(spin), lande_g_(lande_g), stevens_hz_(std::move(stevens_hz)), label_(std::move(label))
{
    if (spin_.twice() < 1)
        throw std::invalid_argument("SpinSystem: 2S+1 must be at least 2");
    if (!(lande_g_ > 0.0) || !std::isfinite(lande_g_))
        throw std::invalid_argument("SpinSystem: lande_g must be positive");
    for (const auto& [idx, value] : stevens_hz_)
    {
        if (!is_supported_stevens(idx))
            throw std::invalid_argument("SpinSystem: unsupported Stevens term " + idx.name() +
                                        "; supported: " + supported_stevens_list());
        if (!std::isfinite(value))
            throw std::invalid_argument("SpinSystem: non-finite coefficient " + idx.name());
    }
}

double SpinSystem::coefficient_hz(StevensIndex idx) const
{
    const auto it = stevens_hz_.find(idx);
    return it == stevens_hz_.end() ? 0.0 : it->second;
}

SpinSystem SpinSystem::with_coefficient(StevensIndex idx, double hz) const
{
    auto coeffs = stevens_hz_;
    coeffs[idx] = hz;
    return {spin_, lande_g_, std::move(coeffs), label_};
}

SpinSystem gd_cawo4()
{
    return SpinSystem(HalfInteger::from_twice(7), 1.99,
                      {{{2, 0}, -9.215e-1 * kGHz},
                       {{4, 0}, -1.139e-3 * kGHz},
                       {{4, 4}, -7.015e-3 * kGHz},
                       {{6, 0}, 5.935e-7 * kGHz},
                       {{6, 4}, 4.747e-7 * kGHz}},
                      "CaWO4:Gd3+");
}

int LevelDiagram::column_of(HalfInteger label) const
{
    for (std::size_t c = 0; c < labels.size(); ++c)
        if (labels[c] == label)
            return static_cast<int>(c);
    throw std::out_of_range("level label " + label.to_string() + " not present");
}

namespace
{

using RealDecomposition = EigenDecomposition<double>;

// Rotates each degenerate eigenspace so Sz is diagonal inside it.
void resolve_degeneracies(RealDecomposition& dec, const Eigen::MatrixXd& sz)
{
    const Eigen::Index n = dec.values.size();
    const double scale = std::max(dec.values.cwiseAbs().maxCoeff(), 1.0);
    const double tol = 1e-9 * scale;
    Eigen::Index start = 0;
    while (start < n)
    {
        Eigen::Index end = start + 1;
        while (end < n && dec.values[end] - dec.values[end - 1] <= tol)
            ++end;
        const Eigen::Index k = end - start;
        if (k > 1)
        {
            const Eigen::MatrixXd block = dec.vectors.middleCols(start, k);
            const Eigen::MatrixXd projected = block.transpose() * sz * block;
            const auto inner = eigh(projected);
            // Highest projection first, matching basis order m = S, S-1, ...
            const Eigen::MatrixXd rotated = block * inner.vectors.rowwise().reverse();
            dec.vectors.middleCols(start, k) = rotated;
        }
        start = end;
    }
}

// Labels by a max-weight assignment between eigenvectors and basis states;
// exact ties lean towards positive projection.
std::vector<HalfInteger> dominant_labels(const Eigen::MatrixXd& vectors, HalfInteger spin)
{
    const Eigen::Index n = vectors.cols();
    Eigen::MatrixXd cost(n, n);
    for (Eigen::Index state = 0; state < n; ++state)
        for (Eigen::Index basis = 0; basis < n; ++basis)
            cost(state, basis) = -vectors(basis, state) * vectors(basis, state) -
                                 1e-12 * projection_of_index(spin, static_cast<int>(basis)).value();
    const auto assign = min_cost_assignment(cost);
    std::vector<HalfInteger> labels(static_cast<std::size_t>(n));
    for (Eigen::Index state = 0; state < n; ++state)
        labels[static_cast<std::size_t>(state)] = projection_of_index(spin, assign[static_cast<std::size_t>(state)]);
    return labels;
}

RealDecomposition diagonalize(const SpinSystem& system, double field, const Eigen::MatrixXd& sz,
                              const PhysicalConstants& constants)
{
    auto dec = eigh(build_hamiltonian<double>(system, field, constants));
    resolve_degeneracies(dec, sz);
    return dec;
}

} // namespace

LevelDiagram level_diagram(const SpinSystem& system, const std::vector<double>& field_grid,
                           const LevelDiagramOptions& opts)
{
    if (field_grid.empty())
        throw std::invalid_argument("level_diagram: empty field grid");
    for (std::size_t i = 0; i < field_grid.size(); ++i)
    {
        if (!std::isfinite(field_grid[i]))
            throw std::invalid_argument("level_diagram: non-finite field value");
        if (i > 0 && !(field_grid[i] > field_grid[i - 1]))
            throw std::invalid_argument("level_diagram: field grid must be strictly increasing");
    }

    const auto sz = spin_matrices<double>(system.spin()).sz;
    const std::size_t points = field_grid.size();
    std::vector<RealDecomposition> decs(points);
    parallel_for(points, opts.threads,
                 [&](std::size_t i) { decs[i] = diagonalize(system, field_grid[i], sz, opts.constants); });

    const int n = system.dimension();
    LevelDiagram out{Eigen::Map<const Eigen::VectorXd>(field_grid.data(), static_cast<Eigen::Index>(points)),
                     Eigen::MatrixXd(static_cast<Eigen::Index>(points), n),
                     dominant_labels(decs[0].vectors, system.spin()),
                     {},
                     system,
                     {}};

    // Columns are ordered by ascending energy at the first point.
    Eigen::MatrixXd prev = decs[0].vectors;
    Eigen::VectorXd prev_e = decs[0].values;
    out.energies.row(0) = prev_e.transpose();
    out.character.push_back(out.labels);

    for (std::size_t row = 1; row < points; ++row)
    {
        const auto& dec = decs[row];
        const double scale = std::max(dec.values.cwiseAbs().maxCoeff(), 1.0);
        const Eigen::MatrixXd overlap = (prev.transpose() * dec.vectors).cwiseAbs();
        Eigen::MatrixXd cost(n, n);
        for (int c = 0; c < n; ++c)
            for (int j = 0; j < n; ++j)
                cost(c, j) = -overlap(c, j) + 1e-9 * std::abs(dec.values[j] - prev_e[c]) / scale;
        const auto assign = min_cost_assignment(cost);

        Eigen::MatrixXd next(n, n);
        Eigen::VectorXd next_e(n);
        double worst = 1.0;
        for (int c = 0; c < n; ++c)
        {
            const int j = assign[static_cast<std::size_t>(c)];
            next.col(c) = dec.vectors.col(j);
            next_e[c] = dec.values[j];
            worst = std::min(worst, overlap(c, j));
        }
        if (worst < opts.min_overlap)
            out.warnings.push_back({field_grid[row - 1], field_grid[row], worst});
        out.energies.row(static_cast<Eigen::Index>(row)) = next_e.transpose();
        out.character.push_back(dominant_labels(next, system.spin()));
        prev = std::move(next);
        prev_e = next_e;
    }
    return out;
}

std::vector<LabeledLevel> zero_field_levels(const SpinSystem& system)
{
    const auto diagram = level_diagram(system, {0.0});
    std::vector<LabeledLevel> out;
    for (int c = 0; c < diagram.levels(); ++c)
        out.push_back({diagram.labels[static_cast<std::size_t>(c)], diagram.energies(0, c)});
    return out;
}

std::string TransitionLine::name() const
{
    return "|" + lower_label.to_string() + ">->|" + upper_label.to_string() + ">";
}

double transition_frequency(const LevelDiagram& diagram, int from_column, int to_column, int row)
{
    return diagram.energies(row, to_column) - diagram.energies(row, from_column);
}

std::vector<TransitionLine> transitions(const LevelDiagram& diagram, int max_delta_sz)
{
    if (diagram.levels() == 0 || diagram.field_grid.size() == 0)
        throw std::invalid_argument("transitions: empty level diagram");

    std::map<int, double> zero_field;  // keyed by twice the label
    for (const auto& level : zero_field_levels(diagram.system))
        zero_field[level.label.twice()] = level.energy_hz;

    const Eigen::Index rows = diagram.energies.rows();
    const int n = diagram.levels();
    const HalfInteger spin = diagram.system.spin();
    // energy_by_label(row, basis index of the character)
    Eigen::MatrixXd by_label(rows, n);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (int c = 0; c < n; ++c)
            by_label(r, index_of_projection(spin, diagram.character[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)])) =
                diagram.energies(r, c);

    std::vector<TransitionLine> out;
    const double scale = std::max(diagram.energies.cwiseAbs().maxCoeff(), 1.0);
    for (int i = 0; i < n; ++i)
    {
        for (int j = i + 1; j < n; ++j)
        {
            const HalfInteger li = projection_of_index(spin, i);
            const HalfInteger lj = projection_of_index(spin, j);
            const int dsz = std::abs(li.twice() - lj.twice()) / 2;
            if (dsz < 1 || dsz > max_delta_sz)
                continue;

            const Eigen::VectorXd diff = by_label.col(j) - by_label.col(i);
            HalfInteger lower = li;
            HalfInteger upper = lj;
            const double mean = diff.mean();
            if (std::abs(mean) <= 1e-9 * scale)
            {
                if (lj < li)
                    std::swap(lower, upper);
            }
            else if (mean < 0.0)
            {
                std::swap(lower, upper);
            }

            TransitionLine line;
            line.lower_label = lower;
            line.upper_label = upper;
            line.delta_sz = dsz;
            line.field_tesla = diagram.field_grid;
            line.freq_hz = diff.cwiseAbs();
            line.zfs_hz = std::abs(zero_field.at(upper.twice()) - zero_field.at(lower.twice()));
            out.push_back(std::move(line));
        }
    }
    return out;
}

std::vector<ZfsEntry> zfs(const SpinSystem& system)
{
    const auto levels = zero_field_levels(system);
    const double span = levels.back().energy_hz - levels.front().energy_hz;

    // Group by |m|.
    std::map<int, std::vector<double>> groups;
    for (const auto& level : levels)
        groups[std::abs(level.label.twice())].push_back(level.energy_hz);

    struct Doublet
    {
        HalfInteger magnitude;
        double energy;
        double internal;
    };
    std::vector<Doublet> doublets;
    for (const auto& [twice, energies] : groups)
    {
        const double mean = std::accumulate(energies.begin(), energies.end(), 0.0) / static_cast<double>(energies.size());
        double internal = 0.0;
        if (energies.size() == 2)
            internal = std::abs(energies[1] - energies[0]);
        if (internal <= 1e-9 * std::max(span, 1.0))
            internal = 0.0;
        doublets.push_back({HalfInteger::from_twice(twice), mean, internal});
    }
    std::sort(doublets.begin(), doublets.end(), [](const Doublet& a, const Doublet& b) { return a.energy < b.energy; });

    auto pm = [](HalfInteger m) { return m.twice() == 0 ? std::string("0") : "+-" + m.to_string(false); };
    std::vector<ZfsEntry> out;
    for (std::size_t a = 0; a < doublets.size(); ++a)
    {
        for (std::size_t b = a + 1; b < doublets.size(); ++b)
        {
            double gap = doublets[b].energy - doublets[a].energy;
            if (gap <= 1e-9 * std::max(span, 1.0))
                gap = 0.0;
            out.push_back({doublets[a].magnitude, doublets[b].magnitude, gap,
                           pm(doublets[a].magnitude) + "<->" + pm(doublets[b].magnitude)});
        }
    }
    for (const auto& d : doublets)
    {
        if (d.magnitude.twice() == 0)
            continue;
        out.push_back({d.magnitude, d.magnitude, d.internal,
                       d.magnitude.to_string() + "<->" + (-d.magnitude).to_string()});
    }
    return out;
}

} // namespace mmesr

namespace mmesr
{

LocalSpinLine nearest_transition(const SpinSystem& system, double b_tesla, double freq_hz, int max_delta_sz,
                                 double db_tesla)
{
    const auto diagram = level_diagram(system, {b_tesla - db_tesla, b_tesla, b_tesla + db_tesla});
    const auto lines = transitions(diagram, max_delta_sz);
    if (lines.empty())
        throw std::invalid_argument("nearest_transition: system has no transitions up to the requested delta_sz");
    const TransitionLine* best = nullptr;
    for (const auto& l : lines)
        if (!best || std::abs(l.freq_hz[1] - freq_hz) < std::abs(best->freq_hz[1] - freq_hz))
            best = &l;
    LocalSpinLine out;
    out.name = best->name();
    out.delta_sz = best->delta_sz;
    out.freq_hz = best->freq_hz[1];
    out.slope_hz_per_tesla = (best->freq_hz[2] - best->freq_hz[0]) / (2.0 * db_tesla);
    out.intercept_hz = out.freq_hz - out.slope_hz_per_tesla * b_tesla;
    return out;
}

} // namespace mmesr
