#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "soem/embedding.hpp"
#include "soem/parallel.hpp"

namespace soem {

enum class DatasetKind { univariate, multivariate };

/// In-memory dataset plus provenance: where it came from and a content hash
/// of the source bytes. Exactly one of `series` / `multi` is populated.
struct Dataset {
    DatasetKind kind = DatasetKind::univariate;
    std::vector<TimeSeries> series;
    std::vector<MultiSeries> multi;
    std::string source;
    std::string digest;

    [[nodiscard]] std::size_t size() const {
        return kind == DatasetKind::univariate ? series.size() : multi.size();
    }
};

inline void validate(const Dataset& ds) {
    if (ds.size() == 0)
        throw std::invalid_argument("Dataset '" + ds.source + "': no series");
    std::map<std::string, int> seen;
    if (ds.kind == DatasetKind::univariate) {
        for (const auto& s : ds.series) {
            validate(s);
            if (++seen[s.id] > 1)
                throw std::invalid_argument("Dataset '" + ds.source + "': duplicate id '" +
                                            s.id + "'");
        }
    } else {
        for (const auto& m : ds.multi) {
            validate(m);
            if (++seen[m.id] > 1)
                throw std::invalid_argument("Dataset '" + ds.source + "': duplicate id '" +
                                            m.id + "'");
        }
    }
}

namespace detail {

[[nodiscard]] inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

[[nodiscard]] inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

/// Splits on commas and tabs; trims spaces and carriage returns per field.
[[nodiscard]] inline std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    const auto push = [&] {
        const auto b = cur.find_first_not_of(" \r");
        if (b == std::string::npos) {
            out.emplace_back();
        } else {
            const auto e = cur.find_last_not_of(" \r");
            out.push_back(cur.substr(b, e - b + 1));
        }
        cur.clear();
    };
    for (char c : line) {
        if (c == ',' || c == '\t')
            push();
        else
            cur += c;
    }
    push();
    return out;
}

[[nodiscard]] inline bool try_parse(const std::string& tok, double& out) {
    const char* b = tok.data();
    const char* e = b + tok.size();
    const auto r = std::from_chars(b, e, out);
    return r.ec == std::errc() && r.ptr == e && !tok.empty();
}

[[nodiscard]] inline double parse_number(const std::string& tok, const std::string& where) {
    double v = 0.0;
    if (!try_parse(tok, v))
        throw std::invalid_argument(where + ": non-numeric field '" + tok + "'");
    return v;
}

/// Integer-valued field (class labels, time indices), normalized so "1" and
/// "1.0" name the same class.
[[nodiscard]] inline long long parse_integer(const std::string& tok, const std::string& where) {
    const double v = parse_number(tok, where);
    const long long r = std::llround(v);
    if (std::abs(v - static_cast<double>(r)) > 1e-9)
        throw std::invalid_argument(where + ": expected integer, got '" + tok + "'");
    return r;
}

/// Orders "2" before "10" when both sides are integral, plain string order
/// otherwise; keeps channel and series enumeration deterministic.
struct NumericAwareLess {
    bool operator()(const std::string& a, const std::string& b) const {
        long long x = 0, y = 0;
        const auto ra = std::from_chars(a.data(), a.data() + a.size(), x);
        const auto rb = std::from_chars(b.data(), b.data() + b.size(), y);
        const bool na = ra.ec == std::errc() && ra.ptr == a.data() + a.size() && !a.empty();
        const bool nb = rb.ec == std::errc() && rb.ptr == b.data() + b.size() && !b.empty();
        if (na && nb) return x != y ? x < y : a < b;
        if (na != nb) return na;
        return a < b;
    }
};

}  // namespace detail

/// One labeled series per line: integer class label first, then the values,
/// comma- or tab-delimited. Lines may differ in length. Ids are assigned by
/// position (s0, s1, ...).
[[nodiscard]] inline Dataset load_ucr(const std::string& path) {
    const std::string bytes = detail::read_file(path);
    Dataset ds;
    ds.kind = DatasetKind::univariate;
    ds.source = path;
    ds.digest = detail::hex64(fnv1a64(bytes));

    std::istringstream in(bytes);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path + " line " + std::to_string(line_no);
        const auto fields = detail::split_fields(line);
        if (fields.size() < 3)
            throw std::invalid_argument(where + ": need a label and at least 2 values");
        TimeSeries ts;
        ts.id = "s" + std::to_string(ds.series.size());
        ts.label = std::to_string(detail::parse_integer(fields[0], where));
        ts.values.reserve(fields.size() - 1);
        for (std::size_t i = 1; i < fields.size(); ++i)
            ts.values.push_back(detail::parse_number(fields[i], where));
        ds.series.push_back(std::move(ts));
    }
    validate(ds);
    return ds;
}

/// Writes the same one-series-per-line format load_ucr reads. Unlabeled
/// series get class 0.
inline void save_ucr(const std::string& path, const std::vector<TimeSeries>& series) {
    if (series.empty()) throw std::invalid_argument("save_ucr: no series");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_ucr: cannot write '" + path + "'");
    char buf[64];
    for (const auto& s : series) {
        validate(s);
        out << (s.label ? *s.label : "0");
        for (double v : s.values) {
            std::snprintf(buf, sizeof buf, ",%.17g", v);
            out << buf;
        }
        out << '\n';
    }
    if (!out.flush()) throw std::runtime_error("save_ucr: write failed for '" + path + "'");
}

/// Long-format multichannel CSV: rows (series_id, channel_id, t, value) in
/// any order, t consecutive per channel. A header row is tolerated when its
/// t field is non-numeric. Optional label file rows are (series_id, label).
[[nodiscard]] inline Dataset load_multivariate(const std::string& path,
                                               const std::optional<std::string>& label_path = {}) {
    const std::string bytes = detail::read_file(path);
    Dataset ds;
    ds.kind = DatasetKind::multivariate;
    ds.source = path;
    ds.digest = detail::hex64(fnv1a64(bytes));

    using ChannelData = std::map<std::string, std::vector<std::pair<long long, double>>,
                                 detail::NumericAwareLess>;
    std::map<std::string, ChannelData, detail::NumericAwareLess> table;

    std::istringstream in(bytes);
    std::string line;
    int line_no = 0;
    bool first_row = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path + " line " + std::to_string(line_no);
        const auto fields = detail::split_fields(line);
        if (fields.size() != 4)
            throw std::invalid_argument(where + ": expected 4 fields (series, channel, t, value)");
        if (first_row) {
            first_row = false;
            double probe = 0.0;
            if (!detail::try_parse(fields[2], probe)) continue;
        }
        const long long t = detail::parse_integer(fields[2], where);
        const double v = detail::parse_number(fields[3], where);
        table[fields[0]][fields[1]].emplace_back(t, v);
    }

    for (auto& [sid, channels] : table) {
        MultiSeries ms;
        ms.id = sid;
        std::size_t expected = 0;
        for (auto& [cid, samples] : channels) {
            std::sort(samples.begin(), samples.end());
            for (std::size_t i = 1; i < samples.size(); ++i) {
                if (samples[i].first == samples[i - 1].first)
                    throw std::invalid_argument("series '" + sid + "' channel '" + cid +
                                                "': duplicate t index " +
                                                std::to_string(samples[i].first));
                if (samples[i].first != samples[i - 1].first + 1)
                    throw std::invalid_argument("series '" + sid + "' channel '" + cid +
                                                "': missing t index " +
                                                std::to_string(samples[i - 1].first + 1));
            }
            if (expected == 0) expected = samples.size();
            if (samples.size() != expected)
                throw std::invalid_argument("series '" + sid + "': ragged channels (channel '" +
                                            cid + "' has " + std::to_string(samples.size()) +
                                            " of " + std::to_string(expected) + " samples)");
            TimeSeries ch;
            ch.id = cid;
            ch.values.reserve(samples.size());
            for (const auto& [t, v] : samples) ch.values.push_back(v);
            ms.channels.push_back(std::move(ch));
        }
        ds.multi.push_back(std::move(ms));
    }

    if (label_path) {
        std::map<std::string, std::string> labels;
        std::istringstream lin(detail::read_file(*label_path));
        int lno = 0;
        while (std::getline(lin, line)) {
            ++lno;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const auto fields = detail::split_fields(line);
            if (fields.size() != 2)
                throw std::invalid_argument(*label_path + " line " + std::to_string(lno) +
                                            ": expected 2 fields (series, label)");
            labels[fields[0]] = fields[1];
        }
        for (auto& ms : ds.multi) {
            const auto it = labels.find(ms.id);
            if (it != labels.end()) ms.label = it->second;
        }
        for (const auto& [id, label] : labels)
            if (table.find(id) == table.end())
                throw std::invalid_argument(*label_path + ": unknown series id '" + id + "'");
    }

    validate(ds);
    return ds;
}

}  // namespace soem
