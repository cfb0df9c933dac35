#include "advkit/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "advkit/errors.hpp"

namespace advkit::csv {

std::string escape_cell(const std::string& cell) {
    if (cell.find_first_of(",\"\n\r") == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string format_row(const Row& row) {
    std::string out;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        out += escape_cell(row[i]);
    }
    out += '\n';
    return out;
}

std::string to_string(const Table& t) {
    std::string out = format_row(t.header);
    for (const Row& r : t.rows) out += format_row(r);
    return out;
}

void write_file(const std::string& path, const Table& t) {
    std::ofstream os(path, std::ios::binary);  // binary keeps the bytes deterministic
    if (!os) throw ConfigError("cannot open for writing: " + path);
    os << to_string(t);
    if (!os) throw ConfigError("write failed: " + path);
}

Table parse(const std::string& text) {
    std::vector<Row> rows;
    Row current;
    std::string cell;
    bool in_quotes = false;
    bool cell_started = false;

    std::size_t i = 0;
    auto end_cell = [&]() {
        current.push_back(cell);
        cell.clear();
        cell_started = false;
    };
    auto end_row = [&]() {
        end_cell();
        rows.push_back(std::move(current));
        current.clear();
    };
    while (i < text.size()) {
        char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    cell += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                cell += c;
            }
        } else if (c == '"' && !cell_started) {
            in_quotes = true;
            cell_started = true;
        } else if (c == ',') {
            end_cell();
        } else if (c == '\n') {
            end_row();
        } else if (c == '\r') {
            // swallow, tolerate CRLF
        } else {
            cell += c;
            cell_started = true;
        }
        ++i;
    }
    if (in_quotes) throw ParseError("csv ended inside a quoted cell");
    if (cell_started || !current.empty()) end_row();

    if (rows.empty()) throw ParseError("csv has no header row");
    Table t;
    t.header = std::move(rows.front());
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != t.header.size())
            throw ParseError("csv row " + std::to_string(r) + " has " +
                             std::to_string(rows[r].size()) + " cells, header has " +
                             std::to_string(t.header.size()));
        t.rows.push_back(std::move(rows[r]));
    }
    return t;
}

Table read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", 17, v);
    return buf;
}

} // namespace advkit::csv
