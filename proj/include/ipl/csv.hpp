#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ipl/bandit.hpp"
#include "ipl/common.hpp"

namespace ipl {

/// Shortest decimal representation that round-trips a double exactly.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) {
        // prefer a shorter form when it already round-trips
        for (int prec = 1; prec < 17; ++prec) {
            char s[32];
            std::snprintf(s, sizeof(s), "%.*g", prec, v);
            std::sscanf(s, "%lf", &back);
            if (back == v) return s;
        }
    }
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

/// Writes the logged-data CSV: x0,...,x{d-1},action,reward,propensity,env.
inline void write_logged_csv(std::ostream& os, const EnvDataset& data) {
    for (int j = 0; j < data.d; ++j) os << "x" << j << ",";
    os << "action,reward,propensity,env\n";
    for (const auto& r : data.rounds) {
        for (double v : r.context) os << format_double(v) << ",";
        os << r.action << "," << format_double(r.reward) << ","
           << format_double(r.propensity) << "," << r.env << "\n";
    }
}

inline void write_logged_csv(const std::string& path, const EnvDataset& data) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open for writing: " + path);
    write_logged_csv(f, data);
}

/// Reads the logged-data CSV. The action count k is inferred as
/// max(action) + 1 unless a positive override is given.
inline EnvDataset read_logged_csv(std::istream& is, int k_override = 0) {
    std::string line;
    if (!std::getline(is, line)) throw Error("logged CSV: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    int d = 0;
    while (d < static_cast<int>(header.size()) && header[d] == "x" + std::to_string(d)) ++d;
    if (d == 0 || static_cast<int>(header.size()) != d + 4 || header[d] != "action" ||
        header[d + 1] != "reward" || header[d + 2] != "propensity" || header[d + 3] != "env")
        throw Error("logged CSV: unexpected header: " + line);

    std::vector<LoggedRound> rounds;
    int max_action = -1;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (static_cast<int>(cells.size()) != d + 4)
            throw Error("logged CSV: wrong column count at line " + std::to_string(lineno));
        LoggedRound r;
        r.context.resize(d);
        try {
            for (int j = 0; j < d; ++j) r.context[j] = std::stod(cells[j]);
            r.action = std::stoi(cells[d]);
            r.reward = std::stod(cells[d + 1]);
            r.propensity = std::stod(cells[d + 2]);
        } catch (const std::exception&) {
            throw Error("logged CSV: parse error at line " + std::to_string(lineno));
        }
        r.env = cells[d + 3];
        max_action = std::max(max_action, r.action);
        rounds.push_back(std::move(r));
    }
    const int k = k_override > 0 ? k_override : max_action + 1;
    return EnvDataset::from_rounds(std::move(rounds), d, k);
}

inline EnvDataset read_logged_csv(const std::string& path, int k_override = 0) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open: " + path);
    return read_logged_csv(f, k_override);
}

/// Plain named-column table, used by the tabular pipeline CSV interface.
struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    int column_index(const std::string& name) const {
        for (std::size_t j = 0; j < columns.size(); ++j)
            if (columns[j] == name) return static_cast<int>(j);
        throw Error("CSV: missing column " + name);
    }
};

inline CsvTable read_csv_table(std::istream& is) {
    CsvTable table;
    std::string line;
    if (!std::getline(is, line)) throw Error("CSV: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    table.columns = split_csv_line(line);
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != table.columns.size())
            throw Error("CSV: ragged row (got " + std::to_string(cells.size()) + " cells)");
        table.rows.push_back(std::move(cells));
    }
    return table;
}

inline CsvTable read_csv_table(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open: " + path);
    return read_csv_table(f);
}

inline void write_csv_table(std::ostream& os, const CsvTable& table) {
    for (std::size_t j = 0; j < table.columns.size(); ++j) {
        if (j) os << ",";
        os << table.columns[j];
    }
    os << "\n";
    for (const auto& row : table.rows) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j) os << ",";
            os << row[j];
        }
        os << "\n";
    }
}

inline void write_csv_table(const std::string& path, const CsvTable& table) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open for writing: " + path);
    write_csv_table(f, table);
}

}  // namespace ipl
