// io.hpp -- CSV sample serialization and JSON parameter schemas.
//
// All floats are written with 17 significant digits so serialize/parse is a
// bit-faithful round trip.  Every JSON artifact carries `schema: 1`.

#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "robustmix/gaussian.hpp"

namespace robustmix {

using nlohmann::json;

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingInput("cannot open for writing: " + path);
    out << text;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInput("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_json_file(const std::string& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

inline json read_json_file(const std::string& path) {
    try {
        return json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("bad JSON in ") + path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// SampleSet <-> CSV (+ JSON sidecar with the generation metadata)

inline std::string sampleset_to_csv(const SampleSet& s) {
    std::ostringstream out;
    const int d = s.dim();
    for (int j = 0; j < d; ++j) out << (j ? "," : "") << "x" << j;
    if (s.labels) out << ",label";
    if (s.corrupted) out << ",corrupted";
    out << "\n";
    for (int i = 0; i < s.n(); ++i) {
        for (int j = 0; j < d; ++j) {
            if (j) out << ",";
            out << format_double(s.points(i, j));
        }
        if (s.labels) out << "," << (*s.labels)[i];
        if (s.corrupted) out << "," << static_cast<int>((*s.corrupted)[i]);
        out << "\n";
    }
    return out.str();
}

inline SampleSet sampleset_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty CSV");
    std::vector<std::string> header;
    {
        std::istringstream hs(line);
        std::string cell;
        while (std::getline(hs, cell, ',')) header.push_back(cell);
    }
    int d = 0;
    bool has_label = false, has_corrupted = false;
    for (const auto& h : header) {
        if (h == "label") has_label = true;
        else if (h == "corrupted") has_corrupted = true;
        else if (h.size() > 1 && h[0] == 'x') ++d;
        else throw ParseError("unexpected CSV column '" + h + "'");
    }
    if (d == 0) throw ParseError("CSV has no coordinate columns");

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::vector<std::uint8_t> corrupted;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        const std::size_t expect = static_cast<std::size_t>(d) + has_label + has_corrupted;
        if (cells.size() != expect) throw ParseError("CSV row with wrong arity");
        std::vector<double> row(d);
        std::size_t c = 0;
        for (int j = 0; j < d; ++j) row[j] = std::stod(cells[c++]);
        rows.push_back(std::move(row));
        if (has_label) labels.push_back(std::stoi(cells[c++]));
        if (has_corrupted) corrupted.push_back(static_cast<std::uint8_t>(std::stoi(cells[c++])));
    }

    SampleSet s;
    s.points.resize(static_cast<int>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < d; ++j) s.points(static_cast<int>(i), j) = rows[i][j];
    }
    if (has_label) s.labels = std::move(labels);
    if (has_corrupted) s.corrupted = std::move(corrupted);
    return s;
}

inline json sampleset_sidecar(const SampleSet& s) {
    return json{{"schema", 1},
                {"seed", s.seed},
                {"eps", s.declared_eps},
                {"adversary", s.adversary},
                {"n", s.n()},
                {"d", s.dim()}};
}

inline void apply_sidecar(SampleSet& s, const json& j) {
    if (j.value("schema", 0) != 1) throw ParseError("sidecar: unsupported schema");
    s.seed = j.value("seed", std::uint64_t{0});
    s.declared_eps = j.value("eps", 0.0);
    s.adversary = j.value("adversary", std::string{});
}

// ---------------------------------------------------------------------------
// Gaussian / mixture parameter schemas

inline json gaussian_to_json(const GaussianParams& g) {
    std::vector<double> mean(g.mean().data(), g.mean().data() + g.dim());
    std::vector<double> cov;
    cov.reserve(static_cast<std::size_t>(g.dim()) * g.dim());
    for (int i = 0; i < g.dim(); ++i) {
        for (int j = 0; j < g.dim(); ++j) cov.push_back(g.covariance()(i, j));
    }
    return json{{"schema", 1}, {"mean", mean}, {"covariance", cov}};
}

inline GaussianParams gaussian_from_json(const json& j) {
    if (j.value("schema", 0) != 1) throw ParseError("gaussian: unsupported schema");
    const auto mean_v = j.at("mean").get<std::vector<double>>();
    const auto cov_v = j.at("covariance").get<std::vector<double>>();
    const int d = static_cast<int>(mean_v.size());
    if (cov_v.size() != static_cast<std::size_t>(d) * d) {
        throw ParseError("gaussian: covariance size != d*d");
    }
    Vector mean(d);
    for (int i = 0; i < d; ++i) mean(i) = mean_v[i];
    Matrix cov(d, d);
    for (int i = 0; i < d; ++i) {
        for (int jc = 0; jc < d; ++jc) cov(i, jc) = cov_v[static_cast<std::size_t>(i) * d + jc];
    }
    return GaussianParams(std::move(mean), std::move(cov));
}

inline json mixture_to_json(const MixtureModel& m) {
    json comps = json::array();
    for (const auto& c : m.components()) comps.push_back(gaussian_to_json(c));
    return json{{"schema", 1}, {"weights", m.weights()}, {"components", comps}};
}

inline MixtureModel mixture_from_json(const json& j) {
    if (j.value("schema", 0) != 1) throw ParseError("mixture: unsupported schema");
    std::vector<GaussianParams> comps;
    for (const auto& cj : j.at("components")) comps.push_back(gaussian_from_json(cj));
    return MixtureModel(std::move(comps), j.at("weights").get<std::vector<double>>());
}

}  // namespace robustmix
