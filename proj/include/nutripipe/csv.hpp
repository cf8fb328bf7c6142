// Copyright 2026 The Nutripipe Authors. All Rights Reserved.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace nutripipe::csv {

// RFC 4180 style reader: comma delimiter, double-quote quoting with "" escape,
// LF or CRLF record terminators. Quoted fields may span lines.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  // Returns false at end of input. Blank lines are skipped.
  bool Next(std::vector<std::string>& fields) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    bool field_started = false;
    char c = 0;
    while (in_.get(c)) {
      any = true;
      if (in_quotes) {
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get(c);
            field.push_back('"');
          } else {
            in_quotes = false;
          }
        } else {
          field.push_back(c);
        }
        continue;
      }
      if (c == '"' && !field_started) {
        in_quotes = true;
        field_started = true;
      } else if (c == ',') {
        fields.push_back(std::move(field));
        field.clear();
        field_started = false;
      } else if (c == '\n' || c == '\r') {
        if (c == '\r' && in_.peek() == '\n') in_.get(c);
        if (fields.empty() && !field_started && field.empty()) {
          any = false;
          continue;  // blank line
        }
        fields.push_back(std::move(field));
        ++line_;
        return true;
      } else {
        field.push_back(c);
        field_started = true;
      }
    }
    if (!any) return false;
    fields.push_back(std::move(field));
    ++line_;
    return true;
  }

  // 1-based number of the record most recently returned.
  std::size_t record_number() const { return line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

inline std::string Escape(std::string_view field) {
  const bool needs_quotes = field.find_first_of(",\"\r\n") != std::string_view::npos;
  if (!needs_quotes) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline void WriteRow(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) out << ',';
    out << Escape(fields[i]);
  }
  out << '\n';
}

}  // namespace nutripipe::csv
