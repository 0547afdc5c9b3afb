#include "mmesr/io.hpp"

#include "mmesr/errors.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mmesr
{

namespace fs = std::filesystem;

std::string format_double(double v)
{
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc())
        throw std::runtime_error("format_double: conversion failed");
    return std::string(buf, end);
}

namespace
{

std::string trim(std::string_view s)
{
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string_view::npos)
        return {};
    const auto b = s.find_last_not_of(" \t\r");
    return std::string(s.substr(a, b - a + 1));
}

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true)
    {
        const auto comma = line.find(',', start);
        out.push_back(trim(std::string_view(line).substr(start, comma - start)));
        if (comma == std::string::npos)
            break;
        start = comma + 1;
    }
    return out;
}

std::string where(const fs::path& p, int line)
{
    return p.string() + ":" + std::to_string(line);
}

} // namespace

std::size_t CsvTable::column(const std::string& name) const
{
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name)
            return i;
    throw DataError(source.string() + ": missing column '" + name + "'");
}

double CsvTable::number(std::size_t r, std::size_t c) const
{
    const std::string& s = rows.at(r).at(c);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw DataError(where(source, line_numbers.at(r)) + ": malformed number '" + s + "' in column '" +
                        header.at(c) + "'");
    return v;
}

CsvTable read_csv(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError(path.string() + ": cannot open file (check the path exists and is readable)");
    CsvTable table;
    table.source = path;
    std::string line;
    int number = 0;
    while (std::getline(in, line))
    {
        ++number;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#')
            continue;
        auto cells = split(t);
        if (table.header.empty())
        {
            table.header = std::move(cells);
            continue;
        }
        if (cells.size() != table.header.size())
            throw DataError(where(path, number) + ": expected " + std::to_string(table.header.size()) +
                            " fields, found " + std::to_string(cells.size()));
        table.rows.push_back(std::move(cells));
        table.line_numbers.push_back(number);
    }
    if (table.header.empty())
        throw DataError(path.string() + ": empty CSV file (no header row)");
    return table;
}

Trace read_trace_csv(const fs::path& path)
{
    const CsvTable t = read_csv(path);
    const auto fc = t.column("freq_hz");
    const auto sc = t.column("s21_db");
    std::vector<double> freq(t.rows.size()), db(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r)
    {
        freq[r] = t.number(r, fc);
        db[r] = t.number(r, sc);
        if (r > 0 && !(freq[r] > freq[r - 1]))
            throw DataError(where(path, t.line_numbers[r]) + ": frequencies must be strictly increasing");
    }
    try
    {
        return Trace::from_db(std::move(freq), std::move(db));
    }
    catch (const DataError& e)
    {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_trace_csv(const fs::path& path, const Trace& trace)
{
    std::string text = "freq_hz,s21_db\n";
    text.reserve(trace.size() * 40);
    for (std::size_t i = 0; i < trace.size(); ++i)
    {
        const double db = trace.s21_db()[i];
        if (!std::isfinite(db))
            throw DataError(path.string() + ": sample " + std::to_string(i) + " has no dB representation");
        text += format_double(trace.freq_hz()[i]);
        text += ',';
        text += format_double(db);
        text += '\n';
    }
    write_text(path, text);
}

nlohmann::json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError(path.string() + ": cannot open file (check the path exists and is readable)");
    try
    {
        return nlohmann::json::parse(in);
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw DataError(path.string() + ": invalid JSON (" + e.what() + ")");
    }
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw DataError(path.string() + ": cannot write file (check the directory exists and is writable)");
    out << text;
    if (!out)
        throw DataError(path.string() + ": write failed");
}

SpinSystem spin_system_from_json(const nlohmann::json& j)
{
    try
    {
        const HalfInteger spin = j.at("spin").is_string() ? HalfInteger::parse(j.at("spin").get<std::string>())
                                                          : HalfInteger::from_double(j.at("spin").get<double>());
        std::map<StevensIndex, double> stevens;
        if (j.contains("stevens_ghz"))
            for (const auto& [name, value] : j.at("stevens_ghz").items())
            {
                if (name.size() != 3 || name[0] != 'B' || !std::isdigit(name[1]) || !std::isdigit(name[2]))
                    throw DataError("unrecognised Stevens coefficient name '" + name + "' (expected e.g. B20)");
                stevens[StevensIndex{name[1] - '0', name[2] - '0'}] = value.get<double>() * kGHz;
            }
        return SpinSystem(spin, j.at("lande_g").get<double>(), std::move(stevens), j.value("label", std::string{}));
    }
    catch (const nlohmann::json::exception& e)
    {
        throw DataError(std::string("spin system JSON: ") + e.what());
    }
    catch (const std::invalid_argument& e)
    {
        throw DataError(std::string("spin system JSON: ") + e.what());
    }
}

nlohmann::json spin_system_to_json(const SpinSystem& system)
{
    nlohmann::json j;
    j["label"] = system.label();
    j["spin"] = system.spin().to_string(false);
    j["lande_g"] = system.lande_g();
    nlohmann::json st = nlohmann::json::object();
    for (const auto& [idx, hz] : system.stevens_hz())
        st[idx.name()] = hz / kGHz;
    j["stevens_ghz"] = st;
    return j;
}

SpinSystem read_spin_system(const fs::path& path)
{
    try
    {
        return spin_system_from_json(read_json(path));
    }
    catch (const DataError& e)
    {
        const std::string what = e.what();
        if (what.rfind(path.string(), 0) == 0)
            throw;
        throw DataError(path.string() + ": " + what);
    }
}

nlohmann::json to_json(const FanoParams& p)
{
    return {{"f0_hz", p.f0_hz}, {"gamma_hz", p.gamma_hz}, {"fano_q", p.fano_q}, {"amp", p.amp}, {"offset", p.offset}};
}

nlohmann::json to_json(const FanoFit& fit)
{
    nlohmann::json j = to_json(fit.params);
    j["q_factor"] = fit.report.q_factor;
    j["loss_tangent"] = fit.report.loss_tangent;
    j["residual_rms"] = fit.report.residual_rms;
    nlohmann::json cov = nlohmann::json::array();
    for (int r = 0; r < 5; ++r)
    {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < 5; ++c)
            row.push_back(fit.report.covariance(r, c));
        cov.push_back(row);
    }
    j["covariance"] = cov;
    j["covariance_order"] = {"f0_hz", "gamma_hz", "fano_q", "amp", "offset"};
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    return j;
}

nlohmann::json to_json(const CrossingFit& fit)
{
    const auto& m = fit.model;
    nlohmann::json j{{"fp_hz", m.fp_hz},
                     {"spin_intercept_hz", m.spin_intercept_hz},
                     {"spin_slope_hz_per_tesla", m.spin_slope_hz_per_tesla},
                     {"g_hz", m.g_hz},
                     {"sigma_fp_hz", fit.sigma[0]},
                     {"sigma_spin_intercept_hz", fit.sigma[1]},
                     {"sigma_spin_slope_hz_per_tesla", fit.sigma[2]},
                     {"sigma_g_hz", fit.sigma[3]},
                     {"crossing_tesla", m.crossing_field()},
                     {"sigma_crossing_tesla", fit.sigma_crossing_field()},
                     {"delta_ps", m.delta_ps()},
                     {"sigma_delta_ps", fit.sigma_delta_ps()},
                     {"residual_rms_hz", fit.residual_rms},
                     {"converged", fit.converged},
                     {"iterations", fit.iterations},
                     {"branch", fit.branch}};
    nlohmann::json cov = nlohmann::json::array();
    for (int r = 0; r < 4; ++r)
    {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < 4; ++c)
            row.push_back(fit.covariance(r, c));
        cov.push_back(row);
    }
    j["covariance"] = cov;
    j["covariance_order"] = {"fp_hz", "spin_intercept_hz", "spin_slope_hz_per_tesla", "g_hz"};
    return j;
}

nlohmann::json to_json(const Concentration& c)
{
    return {{"per_cm3", c.per_cm3}, {"sigma_per_cm3", c.sigma_per_cm3}};
}

} // namespace mmesr
