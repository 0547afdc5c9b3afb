#ifndef MMESR_IO_HPP
#define MMESR_IO_HPP

#include "mmesr/coupling.hpp"
#include "mmesr/lineshape.hpp"
#include "mmesr/spinham.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace mmesr
{

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

struct CsvTable
{
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> line_numbers;   // 1-based source line of each row
    std::filesystem::path source;

    /// Column index by name; throws DataError naming the file when missing.
    std::size_t column(const std::string& name) const;
    /// Parses rows[r][c] as a double; errors report file and line.
    double number(std::size_t r, std::size_t c) const;
};

/// Comma-separated file with a header row. Blank lines and lines starting
/// with '#' are skipped. Throws DataError for unreadable files and ragged rows.
CsvTable read_csv(const std::filesystem::path& path);

/// Trace CSV with header `freq_hz,s21_db`.
Trace read_trace_csv(const std::filesystem::path& path);
void write_trace_csv(const std::filesystem::path& path, const Trace& trace);

nlohmann::json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// {"label", "spin": "7/2", "lande_g", "stevens_ghz": {"B20": ...}}
SpinSystem spin_system_from_json(const nlohmann::json& j);
nlohmann::json spin_system_to_json(const SpinSystem& system);
SpinSystem read_spin_system(const std::filesystem::path& path);

nlohmann::json to_json(const FanoParams& p);
nlohmann::json to_json(const FanoFit& fit);
nlohmann::json to_json(const CrossingFit& fit);
nlohmann::json to_json(const Concentration& c);

} // namespace mmesr

#endif
