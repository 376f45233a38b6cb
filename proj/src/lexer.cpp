#include "lexer.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>

#include <json.hpp>

namespace spear::detail {

namespace {

bool ident_start(unsigned char c) { return std::isalpha(c) || c == '_'; }
bool ident_char(unsigned char c) { return std::isalnum(c) || c == '_'; }

}  // namespace

std::vector<Tok> lex(std::string_view src, std::vector<LexError>& errors) {
  std::vector<Tok> out;
  std::size_t i = 0;
  int line = 1, col = 1;

  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n && i < src.size(); ++k, ++i) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };

  while (i < src.size()) {
    unsigned char c = static_cast<unsigned char>(src[i]);
    if (c == '#') {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    if (std::isspace(c)) {
      advance(1);
      continue;
    }

    Tok tok;
    tok.offset = i;
    tok.line = line;
    tok.column = col;

    if (ident_start(c)) {
      std::size_t start = i;
      while (i < src.size() && ident_char(static_cast<unsigned char>(src[i]))) advance(1);
      tok.type = Tok::T::Ident;
      tok.text = std::string(src.substr(start, i - start));
      tok.length = i - start;
      out.push_back(std::move(tok));
      continue;
    }

    if (std::isdigit(c) ||
        (c == '-' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      std::size_t start = i;
      if (src[i] == '-') advance(1);
      while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) advance(1);
      if (i + 1 < src.size() && src[i] == '.' &&
          std::isdigit(static_cast<unsigned char>(src[i + 1]))) {
        advance(1);
        while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) advance(1);
      }
      tok.type = Tok::T::Num;
      tok.text = std::string(src.substr(start, i - start));
      tok.num = std::stod(tok.text);
      tok.length = i - start;
      out.push_back(std::move(tok));
      continue;
    }

    if (c == '"') {
      std::size_t start = i;
      advance(1);
      std::string value;
      bool closed = false;
      while (i < src.size()) {
        char ch = src[i];
        if (ch == '"') {
          advance(1);
          closed = true;
          break;
        }
        if (ch == '\\' && i + 1 < src.size()) {
          char esc = src[i + 1];
          advance(2);
          switch (esc) {
            case 'n': value.push_back('\n'); break;
            case 't': value.push_back('\t'); break;
            case 'r': value.push_back('\r'); break;
            case '"': value.push_back('"'); break;
            case '\\': value.push_back('\\'); break;
            default:
              value.push_back('\\');
              value.push_back(esc);
              break;
          }
          continue;
        }
        value.push_back(ch);
        advance(1);
      }
      if (!closed) {
        errors.push_back({start, tok.line, tok.column, "unterminated string literal"});
      }
      tok.type = Tok::T::Str;
      tok.text = std::move(value);
      tok.length = i - start;
      out.push_back(std::move(tok));
      continue;
    }

    // multi-char puncts first
    auto two = src.substr(i, 2);
    if (two == "->") {
      tok.type = Tok::T::Arrow;
      tok.text = "->";
      tok.length = 2;
      advance(2);
      out.push_back(std::move(tok));
      continue;
    }
    if (two == "<=" || two == ">=" || two == "==" || two == "!=") {
      tok.type = Tok::T::Punct;
      tok.text = std::string(two);
      tok.length = 2;
      advance(2);
      out.push_back(std::move(tok));
      continue;
    }
    if (std::string("[]{}(),:=<>.").find(static_cast<char>(c)) != std::string::npos) {
      tok.type = Tok::T::Punct;
      tok.text = std::string(1, static_cast<char>(c));
      tok.length = 1;
      advance(1);
      out.push_back(std::move(tok));
      continue;
    }

    errors.push_back({i, line, col, std::string("unexpected character '") +
                                        static_cast<char>(c) + "'"});
    advance(1);
  }

  Tok end;
  end.type = Tok::T::End;
  end.offset = src.size();
  end.line = line;
  end.column = col;
  out.push_back(end);
  return out;
}

std::string quote_string(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    switch (ch) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(ch); break;
    }
  }
  out.push_back('"');
  return out;
}

std::string format_number(double d) {
  if (std::isfinite(d) && d == std::floor(d) && std::fabs(d) < 1e15) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(d));
    return buf;
  }
  return nlohmann::json(d).dump();
}

}  // namespace spear::detail
