#ifndef MMESR_UNITS_HPP
#define MMESR_UNITS_HPP

#include <cmath>
#include <compare>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mmesr
{

// All energies and frequencies are ordinary frequencies in Hz, fields in tesla.
struct PhysicalConstants
{
    double bohr_magneton_over_h = 13.996244936e9;   // Hz/T
    double planck = 6.62607015e-34;                  // J s
    double vacuum_permeability = 1.25663706212e-6;   // N/A^2

    double reduced_planck() const { return planck / (2.0 * std::numbers::pi); }
    double bohr_magneton() const { return bohr_magneton_over_h * planck; }  // J/T
};

inline constexpr PhysicalConstants kCodata{};

inline constexpr double kGHz = 1e9;
inline constexpr double kMHz = 1e6;
inline constexpr double kKHz = 1e3;

/// A value restricted to integer multiples of 1/2, stored as twice the value.
/// Used both for the spin quantum number S and for projections m.
class HalfInteger
{
public:
    constexpr HalfInteger() = default;
    static constexpr HalfInteger from_twice(int twice)
    {
        HalfInteger h;
        h.twice_ = twice;
        return h;
    }

    /// Throws std::invalid_argument unless 2*value is an integer.
    static HalfInteger from_double(double value)
    {
        const double twice = 2.0 * value;
        const double rounded = std::round(twice);
        if (!std::isfinite(value) || std::abs(twice - rounded) > 1e-9)
            throw std::invalid_argument("value " + std::to_string(value) + " is not a half-integer");
        return from_twice(static_cast<int>(rounded));
    }

    /// Accepts "7/2", "-3/2", "3", "3.5".
    static HalfInteger parse(std::string_view text);

    constexpr int twice() const { return twice_; }
    constexpr double value() const { return 0.5 * twice_; }
    constexpr bool is_integer() const { return twice_ % 2 == 0; }

    /// "+5/2", "-1/2", "0", "+3".
    std::string to_string(bool signed_form = true) const;

    constexpr HalfInteger operator-() const { return from_twice(-twice_); }
    friend constexpr auto operator<=>(HalfInteger, HalfInteger) = default;

private:
    int twice_ = 0;
};

inline HalfInteger HalfInteger::parse(std::string_view text)
{
    std::string s(text);
    const auto slash = s.find('/');
    try
    {
        if (slash != std::string::npos)
        {
            const int num = std::stoi(s.substr(0, slash));
            const int den = std::stoi(s.substr(slash + 1));
            if (den == 1)
                return from_twice(2 * num);
            if (den != 2)
                throw std::invalid_argument("denominator must be 1 or 2");
            return from_twice(num);
        }
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size())
            throw std::invalid_argument("trailing characters");
        return from_double(v);
    }
    catch (const std::logic_error& e)
    {
        throw std::invalid_argument("cannot parse half-integer '" + s + "': " + e.what());
    }
}

inline std::string HalfInteger::to_string(bool signed_form) const
{
    std::string sign;
    if (twice_ < 0)
        sign = "-";
    else if (twice_ > 0 && signed_form)
        sign = "+";
    const int mag = std::abs(twice_);
    if (mag % 2 == 0)
        return sign + std::to_string(mag / 2);
    return sign + std::to_string(mag) + "/2";
}

} // namespace mmesr

#endif
