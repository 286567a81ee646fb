#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ortho_cate/errors.hpp"

namespace ortho_cate::detail {

// Splits "name{k1=v1,k2=v2}" into the name and key/value pairs; the brace
// block is optional.
struct BracedSpec {
    std::string name;
    std::vector<std::pair<std::string, double>> params;

    double get(const std::string& key, double fallback) const {
        for (const auto& [k, v] : params)
            if (k == key) return v;
        return fallback;
    }
    bool has(const std::string& key) const {
        for (const auto& [k, v] : params)
            if (k == key) return true;
        return false;
    }
};

inline BracedSpec parse_braced(const std::string& text) {
    BracedSpec out;
    const auto lb = text.find('{');
    if (lb == std::string::npos) {
        out.name = text;
        return out;
    }
    out.name = text.substr(0, lb);
    const auto rb = text.rfind('}');
    if (rb == std::string::npos || rb < lb)
        throw InvalidParams("unbalanced braces in '" + text + "'");
    const std::string body = text.substr(lb + 1, rb - lb - 1);
    std::size_t pos = 0;
    while (pos < body.size()) {
        auto comma = body.find(',', pos);
        if (comma == std::string::npos) comma = body.size();
        const std::string item = body.substr(pos, comma - pos);
        if (!item.empty()) {
            const auto eq = item.find('=');
            if (eq == std::string::npos)
                throw InvalidParams("expected key=value in '" + text + "'");
            out.params.emplace_back(item.substr(0, eq),
                                    std::stod(item.substr(eq + 1)));
        }
        pos = comma + 1;
    }
    return out;
}

}  // namespace ortho_cate::detail
