#ifndef MMESR_SYNTH_HPP
#define MMESR_SYNTH_HPP

#include "mmesr/modemap.hpp"
#include "mmesr/spinham.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mmesr
{

struct SynthMode
{
    double f0_hz = 0.0;
    double q_factor = 1e6;
    double fano_q = 0.0;
    double amplitude = 1.0;
    double half_span_hz = 0.0;   // <= 0: scenario default
    int points = 0;              // <= 0: scenario default
};

/// A spin species: either a full Hamiltonian (all lines up to max_delta_sz)
/// or one effective line f = intercept + slope * B.
struct SynthSpecies
{
    std::string label;
    std::optional<SpinSystem> system;
    int max_delta_sz = 1;
    double line_intercept_hz = 0.0;
    double line_slope_hz_per_tesla = 0.0;
    double g_hz = 0.0;           // coupling used for every crossing of this species
};

struct Scenario
{
    std::uint64_t seed = 0;
    double b_start_tesla = 0.0;
    double b_stop_tesla = 0.0;
    double b_step_tesla = 0.001;
    double noise_sigma = 0.0;       // additive Gaussian on linear |S21|
    double freq_jitter_hz = 0.0;    // Gaussian jitter of each rendered centre, per step
    double baseline = 0.05;         // linear background under all modes
    double half_span_hz = 1e6;      // default trace window around each mode
    int points = 2001;              // default samples per window
    double max_detuning_g = 100.0;  // lines further than this many g do not pull a mode
    std::vector<SynthMode> modes;
    std::vector<SynthSpecies> species;
};

/// Reads the scenario JSON. Relative "system_file" entries resolve against base_dir.
Scenario scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

struct TrueLine
{
    std::string species;
    std::string name;
    int delta_sz = 1;
    double g_hz = 0.0;
    std::vector<double> freq_hz;    // at each sweep field
};

struct TrueCrossing
{
    int mode_id = 0;
    std::string species;
    std::string line;
    double b_tesla = 0.0;
    double f_hz = 0.0;
    double g_hz = 0.0;
    double slope_hz_per_tesla = 0.0;
};

struct TrueMode
{
    SynthMode spec;
    double gamma_hz = 0.0;
    std::vector<double> centre_hz;  // pulled centre at each field, before jitter
};

/// Everything the renderer needs; written alongside the traces.
struct GroundTruth
{
    std::uint64_t seed = 0;
    double step_tesla = 0.0;
    double noise_sigma = 0.0;
    double freq_jitter_hz = 0.0;    // drawn per (mode, step) from the seed at render time
    double baseline = 0.0;
    std::vector<double> fields_tesla;
    std::vector<double> grid_hz;    // shared frequency axis of every trace
    std::vector<TrueMode> modes;
    std::vector<TrueLine> lines;
    std::vector<TrueCrossing> crossings;
    std::vector<std::string> warnings;
};

/// Spin lines from the species, photon-like branch of each (mode, line)
/// pair within max_detuning_g composed additively, and crossings located on
/// a 10x refined field grid. Throws std::invalid_argument for invalid scenarios.
GroundTruth ground_truth(const Scenario& scenario, int threads = 1);

/// Renders every step from the ground truth alone.
SweepMap render_sweep(const GroundTruth& truth, int threads = 1);

nlohmann::json to_json(const GroundTruth& truth);

struct SynthOutput
{
    std::filesystem::path manifest;
    GroundTruth truth;
};

/// Writes manifest.json, one bNNNN.csv per step and ground_truth.json into out_dir.
SynthOutput synth_sweep(const Scenario& scenario, const std::filesystem::path& out_dir, int threads = 1);

} // namespace mmesr

#endif
