#pragma once

#include <cctype>
#include <istream>
#include <string>

namespace v2lab::detail {

// Skips whitespace and '#' comment lines between PNM header tokens.
inline std::string next_pnm_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    return tok;
}

}  // namespace v2lab::detail
