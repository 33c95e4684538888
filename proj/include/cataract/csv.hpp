#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cataract::csv {

using Row = std::vector<std::string>;

struct Table {
    Row header;
    std::vector<Row> rows;

    /// Index of `name` in the header, if present.
    std::optional<std::size_t> column(std::string_view name) const;
};

/// RFC 4180 reader: quoted fields, doubled quotes, embedded separators and
/// newlines, CRLF line ends and a leading UTF-8 BOM. Blank lines are skipped.
Table parse(std::string_view text);

/// Throws IoError if the file cannot be opened.
Table read_file(const std::filesystem::path& path);

/// Quotes a field only when it contains a separator, quote or newline.
std::string escape(std::string_view field);

std::string format_row(const Row& row);

/// Writes header + rows with '\n' line ends. Parent directories are created.
void write_file(const std::filesystem::path& path, const Row& header, const std::vector<Row>& rows);

/// Fixed-precision decimal rendering used for every numeric CSV cell so that
/// artifacts are byte-stable.
std::string fmt(double value, int precision = 6);

} // namespace cataract::csv
