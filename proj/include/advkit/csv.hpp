#pragma once

#include <string>
#include <vector>

namespace advkit::csv {

using Row = std::vector<std::string>;

struct Table {
    Row header;
    std::vector<Row> rows;
};

std::string escape_cell(const std::string& cell);
std::string format_row(const Row& row);

// Serializes header + rows; every output of the toolkit goes through this.
std::string to_string(const Table& t);
void write_file(const std::string& path, const Table& t);

// Parses quoted cells, embedded commas/newlines; throws ParseError on malformed input.
Table parse(const std::string& text);
Table read_file(const std::string& path);

std::string format_double(double v);

} // namespace advkit::csv
