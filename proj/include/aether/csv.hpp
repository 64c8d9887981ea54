#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aether::csv {

struct Record {
  std::size_t line = 0;  // 1-based line on which the record starts
  std::vector<std::string> fields;
};

/// RFC 4180 parse: comma separated, double-quote quoting with "" escapes,
/// CRLF or LF line ends, quoted fields may span lines. Blank lines are skipped.
/// Throws FormatError on an unterminated quote or stray quote.
std::vector<Record> parse(std::string_view text, const std::string& source = "<memory>");

std::vector<Record> read_file(const std::string& path);

/// Quotes the field only when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);

std::string join_row(const std::vector<std::string>& fields);

/// Header lookup helper: column index by name.
class Header {
 public:
  explicit Header(const Record& header);
  std::optional<std::size_t> find(std::string_view name) const;
  /// Throws FormatError naming `name` when absent.
  std::size_t require(std::string_view name, const std::string& source) const;
  std::size_t size() const { return names_.size(); }

 private:
  std::vector<std::string> names_;
};

}  // namespace aether::csv
