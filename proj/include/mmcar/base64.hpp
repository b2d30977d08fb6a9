#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmcar {

inline std::string base64_encode(const std::uint8_t* data, std::size_t len) {
    static const char tbl[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= len; i += 3) {
        std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back(tbl[v & 63]);
    }
    std::size_t rem = len - i;
    if (rem == 1) {
        std::uint32_t v = data[i] << 16;
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out += "==";
    } else if (rem == 2) {
        std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& in) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (in.size() % 4 != 0) throw std::runtime_error("base64: length not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(in.size() / 4 * 3);
    for (std::size_t i = 0; i < in.size(); i += 4) {
        int n = 0;
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            char c = in[i + k];
            if (c == '=') break;
            int d = val(c);
            if (d < 0) throw std::runtime_error("base64: invalid character");
            v = (v << 6) | static_cast<std::uint32_t>(d);
            ++n;
        }
        v <<= 6 * (4 - n);
        if (n >= 2) out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
        if (n >= 3) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
        if (n == 4) out.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
    return out;
}

}  // namespace mmcar
