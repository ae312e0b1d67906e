#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "teiresias/common.hpp"

namespace teiresias::datasets {

enum class Kind { ipv4, fullnames, handles, noise };

inline std::optional<Kind> parse_kind(const std::string& s) {
    if (s == "ipv4") return Kind::ipv4;
    if (s == "fullnames") return Kind::fullnames;
    if (s == "handles") return Kind::handles;
    if (s == "noise") return Kind::noise;
    return std::nullopt;
}

namespace detail {

// Unbiased bounded draw (multiply-shift with rejection); the C++ distribution
// classes are not reproducible across standard libraries, this is.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
    std::uint64_t threshold = (-n) % n;
    while (true) {
        unsigned __int128 m = static_cast<unsigned __int128>(rng()) * n;
        if (static_cast<std::uint64_t>(m) >= threshold)
            return static_cast<std::uint64_t>(m >> 64);
    }
}

inline constexpr std::array kForenames = {
    "Alice",  "Amara",  "Andre",   "Anna",   "Arjun",  "Astrid", "Bruno",  "Carmen",
    "Chen",   "Clara",  "Daniel",  "Elena",  "Emeka",  "Fatima", "Felix",  "Greta",
    "Hannah", "Hiro",   "Ines",    "Ivan",   "Jonas",  "Julia",  "Kai",    "Lars",
    "Leila",  "Liam",   "Lucia",   "Mateo",  "Mia",    "Milan",  "Nadia",  "Noah",
    "Olga",   "Omar",   "Paula",   "Priya",  "Rafael", "Sofia",  "Tariq",  "Yuki",
};

inline constexpr std::array kSurnames = {
    "Abebe",    "Almeida",  "Bauer",   "Becker",  "Chen",     "Costa",    "Dubois",
    "Fischer",  "Garcia",   "Haas",    "Hansen",  "Hoffmann", "Ivanov",   "Jansen",
    "Kato",     "Keller",   "Kim",     "Kowalski", "Lange",   "Lindgren", "Martin",
    "Meier",    "Mendoza",  "Moreau",  "Nakamura", "Novak",   "Okafor",   "Ortiz",
    "Petrov",   "Richter",  "Rossi",   "Santos",  "Schmidt",  "Silva",    "Singh",
    "Tanaka",   "Vogel",    "Wagner",  "Weber",   "Zhang",
};

}  // namespace detail

// Four evaluation corpora. Every generator is deterministic for a given seed,
// writes CSV with a header row, and rows=0 produces a header-only file.
//   ipv4       one `ip_v4` column of dotted quads with octets in 0..255
//   fullnames  one `full_name` column of "Forename Surname"
//   handles    one `user_name` column, charset [a-z0-9_], length 5..15
//   noise      columns user_name,email,address,ip holding lowercase
//              alphanumeric strings (length 8..14, at least one letter) that
//              no shipped pattern can match
inline std::string generate_dataset(Kind kind, std::uint64_t rows, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::string out;
    auto alnum_token = [&rng](std::uint64_t min_len, std::uint64_t max_len) {
        static constexpr char kCharset[] = "abcdefghijklmnopqrstuvwxyz0123456789";
        while (true) {
            std::uint64_t len = min_len + detail::bounded(rng, max_len - min_len + 1);
            std::string s;
            bool has_letter = false;
            for (std::uint64_t i = 0; i < len; ++i) {
                char c = kCharset[detail::bounded(rng, sizeof(kCharset) - 1)];
                has_letter |= c >= 'a' && c <= 'z';
                s.push_back(c);
            }
            if (has_letter) return s;
        }
    };
    switch (kind) {
        case Kind::ipv4: {
            out = "ip_v4\n";
            for (std::uint64_t r = 0; r < rows; ++r) {
                for (int o = 0; o < 4; ++o) {
                    if (o) out.push_back('.');
                    out += std::to_string(detail::bounded(rng, 256));
                }
                out.push_back('\n');
            }
            break;
        }
        case Kind::fullnames: {
            out = "full_name\n";
            for (std::uint64_t r = 0; r < rows; ++r) {
                out += detail::kForenames[detail::bounded(rng, detail::kForenames.size())];
                out.push_back(' ');
                out += detail::kSurnames[detail::bounded(rng, detail::kSurnames.size())];
                out.push_back('\n');
            }
            break;
        }
        case Kind::handles: {
            out = "user_name\n";
            for (std::uint64_t r = 0; r < rows; ++r) {
                std::string h = alnum_token(5, 15);
                // handles additionally allow underscores in the middle; only
                // when a second letter keeps the at-least-one-letter guarantee
                auto letters = std::count_if(h.begin(), h.end(),
                                             [](char c) { return c >= 'a' && c <= 'z'; });
                if (h.size() > 2 && letters > 1 && detail::bounded(rng, 4) == 0)
                    h[1 + detail::bounded(rng, h.size() - 2)] = '_';
                out += h;
                out.push_back('\n');
            }
            break;
        }
        case Kind::noise: {
            out = "user_name,email,address,ip\n";
            for (std::uint64_t r = 0; r < rows; ++r) {
                for (int c = 0; c < 4; ++c) {
                    if (c) out.push_back(',');
                    out += alnum_token(8, 14);
                }
                out.push_back('\n');
            }
            break;
        }
    }
    return out;
}

inline void write_dataset(Kind kind, std::uint64_t rows, const std::string& path,
                          std::uint64_t seed) {
    write_file(path, generate_dataset(kind, rows, seed));
}

}  // namespace teiresias::datasets
