#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "soem/eigenmap.hpp"

namespace soem {

namespace detail {

inline constexpr char b64_alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

[[nodiscard]] inline std::string b64_encode(const std::vector<unsigned char>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= bytes.size(); i += 3) {
        const unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out.push_back(b64_alphabet[(v >> 18) & 63]);
        out.push_back(b64_alphabet[(v >> 12) & 63]);
        out.push_back(b64_alphabet[(v >> 6) & 63]);
        out.push_back(b64_alphabet[v & 63]);
    }
    const std::size_t rest = bytes.size() - i;
    if (rest == 1) {
        const unsigned v = bytes[i] << 16;
        out.push_back(b64_alphabet[(v >> 18) & 63]);
        out.push_back(b64_alphabet[(v >> 12) & 63]);
        out.append("==");
    } else if (rest == 2) {
        const unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out.push_back(b64_alphabet[(v >> 18) & 63]);
        out.push_back(b64_alphabet[(v >> 12) & 63]);
        out.push_back(b64_alphabet[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

[[nodiscard]] inline std::vector<unsigned char> b64_decode(const std::string& text) {
    int table[256];
    for (auto& t : table) t = -1;
    for (int i = 0; i < 64; ++i) table[static_cast<unsigned char>(b64_alphabet[i])] = i;

    if (text.size() % 4 != 0)
        throw std::invalid_argument("base64: length not a multiple of 4");
    std::vector<unsigned char> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int vals[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char ch = text[i + k];
            if (ch == '=' && i + 4 == text.size() && k >= 2) {
                vals[k] = 0;
                ++pad;
            } else {
                vals[k] = table[static_cast<unsigned char>(ch)];
                if (vals[k] < 0 || pad > 0)
                    throw std::invalid_argument("base64: invalid character");
            }
        }
        const unsigned v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
        out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
        if (pad < 2) out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<unsigned char>(v & 0xff));
    }
    return out;
}

/// Column-major little-endian 8-byte encoding; exact for every finite and
/// non-finite double, which is what makes the round trip bitwise.
[[nodiscard]] inline std::string encode_basis(const Eigen::MatrixXd& u) {
    std::vector<unsigned char> bytes;
    bytes.reserve(static_cast<std::size_t>(u.size()) * 8);
    for (Eigen::Index j = 0; j < u.cols(); ++j)
        for (Eigen::Index i = 0; i < u.rows(); ++i) {
            const auto word = std::bit_cast<std::uint64_t>(u(i, j));
            for (int b = 0; b < 8; ++b)
                bytes.push_back(static_cast<unsigned char>((word >> (8 * b)) & 0xff));
        }
    return b64_encode(bytes);
}

[[nodiscard]] inline Eigen::MatrixXd decode_basis(const std::string& text, int L) {
    const std::vector<unsigned char> bytes = b64_decode(text);
    if (bytes.size() != static_cast<std::size_t>(L) * L * 8)
        throw std::invalid_argument("map file: basis block holds " +
                                    std::to_string(bytes.size()) + " bytes, expected " +
                                    std::to_string(static_cast<std::size_t>(L) * L * 8));
    Eigen::MatrixXd u(L, L);
    std::size_t at = 0;
    for (int j = 0; j < L; ++j)
        for (int i = 0; i < L; ++i) {
            std::uint64_t word = 0;
            for (int b = 0; b < 8; ++b)
                word |= static_cast<std::uint64_t>(bytes[at++]) << (8 * b);
            u(i, j) = std::bit_cast<double>(word);
        }
    return u;
}

}  // namespace detail

inline constexpr int map_format_version = 1;

[[nodiscard]] inline nlohmann::json map_to_json(const EigenMap& map) {
    validate(map);
    nlohmann::json j{
        {"format_version", map_format_version}, {"rows", map.grid.rows},
        {"cols", map.grid.cols},                {"L", map.L},
        {"seed", map.seed},                     {"iteration", map.iteration},
    };
    auto& bases = j["bases"] = nlohmann::json::array();
    for (const auto& b : map.bases) bases.push_back(detail::encode_basis(b.data()));
    return j;
}

[[nodiscard]] inline EigenMap map_from_json(const nlohmann::json& j) {
    if (!j.is_object())
        throw std::invalid_argument("map file: not a JSON object");
    for (const char* key : {"format_version", "rows", "cols", "L", "seed", "iteration", "bases"})
        if (!j.contains(key))
            throw std::invalid_argument(std::string("map file: missing field '") + key + "'");
    const int version = j.at("format_version").get<int>();
    if (version > map_format_version)
        throw std::invalid_argument("map file: format_version " + std::to_string(version) +
                                    " is newer than supported version " +
                                    std::to_string(map_format_version));
    if (version < 1)
        throw std::invalid_argument("map file: invalid format_version");

    EigenMap map;
    map.grid = Grid{j.at("rows").get<int>(), j.at("cols").get<int>(), true};
    map.L = j.at("L").get<int>();
    map.seed = j.at("seed").get<std::uint64_t>();
    map.iteration = j.at("iteration").get<int>();
    validate(map.grid);
    if (map.L < 2)
        throw std::invalid_argument("map file: L must be >= 2");

    const auto& bases = j.at("bases");
    if (!bases.is_array() || bases.size() != static_cast<std::size_t>(map.grid.nodes()))
        throw std::invalid_argument("map file: expected " + std::to_string(map.grid.nodes()) +
                                    " bases, found " + std::to_string(bases.size()));
    map.bases.reserve(bases.size());
    for (const auto& entry : bases) {
        if (!entry.is_string())
            throw std::invalid_argument("map file: basis block is not a string");
        try {
            map.bases.emplace_back(detail::decode_basis(entry.get<std::string>(), map.L));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(std::string("map file: corrupt basis: ") + e.what());
        }
    }
    map.jd_converged.assign(map.bases.size(), 1);
    validate(map);
    return map;
}

inline void save_map(const EigenMap& map, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("save_map: cannot open '" + path + "' for writing");
    out << map_to_json(map).dump(2) << '\n';
    if (!out)
        throw std::runtime_error("save_map: write to '" + path + "' failed");
}

[[nodiscard]] inline EigenMap load_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::invalid_argument("load_map: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("load_map: '" + path + "' is not valid JSON: " + e.what());
    }
    try {
        return map_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("load_map: '" + path + "' has malformed fields: " + e.what());
    }
}

}  // namespace soem
