#pragma once

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include "stclab/errors.hpp"

namespace stclab {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// RFC-4180-style CSV with a mandatory header row. All values this project
/// emits are plain numbers or simple tokens, so no quoting is needed.
class CsvWriter {
  public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
        if (!out_) throw ConfigError("CsvWriter: cannot open " + path);
        write_tokens(header);
    }

    void row(std::initializer_list<double> values) {
        std::vector<std::string> tokens;
        tokens.reserve(values.size());
        for (double v : values) tokens.push_back(format_double(v));
        write_tokens(tokens);
    }

    void row(const std::vector<std::string>& tokens) { write_tokens(tokens); }

  private:
    void write_tokens(const std::vector<std::string>& tokens) {
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (i) out_ << ',';
            out_ << tokens[i];
        }
        out_ << "\r\n";
    }
    std::ofstream out_;
};

} // namespace stclab
