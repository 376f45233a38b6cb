// Internal token model shared by the condition parser and the DSL parser.
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace spear::detail {

struct Tok {
  enum class T { Ident, Str, Num, Punct, Arrow, End };
  T type = T::End;
  std::string text;  // ident name / unescaped string value / punct spelling
  double num = 0.0;
  std::size_t offset = 0;
  std::size_t length = 0;
  int line = 1;
  int column = 1;
};

struct LexError {
  std::size_t offset = 0;
  int line = 1;
  int column = 1;
  std::string message;
};

// Tokenizes DSL/condition source. '#' starts a line comment. Multi-char
// puncts: -> <= >= == != ; strings are double-quoted with \" \\ \n \t \r
// escapes. Always terminates with an End token.
std::vector<Tok> lex(std::string_view src, std::vector<LexError>& errors);

// Canonical double-quoted spelling with escapes.
std::string quote_string(const std::string& s);

// Canonical number spelling: integral values without a decimal point,
// otherwise the shortest round-trip form.
std::string format_number(double d);

}  // namespace spear::detail
