#include "cataract/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cataract/errors.hpp"

namespace cataract::csv {

std::optional<std::size_t> Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return i;
        }
    }
    return std::nullopt;
}

Table parse(std::string_view text) {
    if (text.starts_with("\xEF\xBB\xBF")) {
        text.remove_prefix(3);
    }

    std::vector<Row> records;
    Row current;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;

    auto end_field = [&] {
        current.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        const bool blank = current.size() == 1 && current.front().empty();
        if (!blank) {
            records.push_back(std::move(current));
        }
        current.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            if (!field_started || field.empty()) {
                in_quotes = true;
                field_started = true;
            } else {
                field.push_back(c);
            }
            break;
        case ',':
            end_field();
            break;
        case '\r':
            if (i + 1 < text.size() && text[i + 1] == '\n') {
                ++i;
            }
            end_record();
            break;
        case '\n':
            end_record();
            break;
        default:
            field.push_back(c);
            field_started = true;
        }
    }
    if (field_started || !field.empty() || !current.empty()) {
        end_record();
    }

    Table table;
    if (!records.empty()) {
        table.header = std::move(records.front());
        table.rows.assign(std::make_move_iterator(records.begin() + 1),
                          std::make_move_iterator(records.end()));
    }
    return table;
}

Table read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open CSV file: " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) {
        return std::string(field);
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') {
            out.push_back('"');
        }
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string format_row(const Row& row) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i > 0) {
            line.push_back(',');
        }
        line += escape(row[i]);
    }
    return line;
}

void write_file(const std::filesystem::path& path, const Row& header, const std::vector<Row>& rows) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write CSV file: " + path.string());
    }
    out << format_row(header) << '\n';
    for (const auto& row : rows) {
        out << format_row(row) << '\n';
    }
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

std::string fmt(double value, int precision) {
    if (std::isnan(value)) {
        return "nan";
    }
    if (std::isinf(value)) {
        return value > 0 ? "inf" : "-inf";
    }
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.*f", precision, value);
    std::string s = buffer;
    if (s == "-0" || s.find_first_not_of("-0.") == std::string::npos) {
        // Normalize negative zero.
        if (!s.empty() && s.front() == '-') {
            s.erase(s.begin());
        }
    }
    return s;
}

} // namespace cataract::csv
