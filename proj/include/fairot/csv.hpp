#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fairot::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

/// Numeric CSV. Blank lines are skipped; fields are trimmed.
Table read(const std::filesystem::path& path, bool header);

std::vector<std::string> split(std::string_view line);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

}  // namespace fairot::csv
