#pragma once

#include "hbplate/adaptive_driver.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <span>
#include <sstream>
#include <string>

namespace hbplate {

inline constexpr const char* records_header = "iteration,dofs,n_elements,h_max,error_h2,eta_total,theta,qoi";

/// Real as 17 significant digits, or "nan" when unavailable.
inline std::string format_real(double v)
{
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline void write_records(std::ostream& os, std::span<const IterationRecord> records)
{
    os << records_header << '\n';
    for (const IterationRecord& r : records) {
        os << r.iteration << ',' << r.dofs << ',' << r.n_elements << ',' << format_real(r.h_max) << ','
           << format_real(r.error_h2) << ',' << format_real(r.eta_total) << ',' << format_real(r.theta) << ','
           << format_real(r.qoi) << '\n';
    }
}

} // namespace hbplate
