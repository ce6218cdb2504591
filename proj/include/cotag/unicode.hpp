#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cotag {

// Minimal UTF-8 handling: decode to code points, encode back, and a small
// case-folding table sufficient for gazetteer surfaces (ASCII, Latin-1,
// Latin Extended-A, Greek and Cyrillic base ranges). Anything outside the
// table folds to itself. Invalid byte sequences decode to U+FFFD one byte
// at a time so decoding never throws and never loses positions.

inline constexpr char32_t kReplacementChar = 0xFFFD;

inline std::u32string utf8_decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  auto cont = [&](std::size_t k) {
    return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
  };
  while (i < s.size()) {
    unsigned char b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) {
      out.push_back(b0);
      i += 1;
    } else if ((b0 & 0xE0) == 0xC0 && cont(1)) {
      char32_t cp = (char32_t(b0 & 0x1F) << 6) | (s[i + 1] & 0x3F);
      out.push_back(cp < 0x80 ? kReplacementChar : cp);
      i += 2;
    } else if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
      char32_t cp = (char32_t(b0 & 0x0F) << 12) | (char32_t(s[i + 1] & 0x3F) << 6) |
                    (s[i + 2] & 0x3F);
      bool surrogate = cp >= 0xD800 && cp <= 0xDFFF;
      out.push_back(cp < 0x800 || surrogate ? kReplacementChar : cp);
      i += 3;
    } else if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
      char32_t cp = (char32_t(b0 & 0x07) << 18) | (char32_t(s[i + 1] & 0x3F) << 12) |
                    (char32_t(s[i + 2] & 0x3F) << 6) | (s[i + 3] & 0x3F);
      out.push_back(cp < 0x10000 || cp > 0x10FFFF ? kReplacementChar : cp);
      i += 4;
    } else {
      out.push_back(kReplacementChar);
      i += 1;
    }
  }
  return out;
}

inline void utf8_append(std::string& out, char32_t cp) {
  if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = kReplacementChar;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::string utf8_encode(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : s) utf8_append(out, cp);
  return out;
}

inline char32_t fold_char(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 0x20;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 0x20;  // Latin-1 uppercase
  if (c == 0x130) return U'i';                               // dotted capital I
  if (c >= 0x100 && c <= 0x137) return c | 1;                // Latin Ext-A pairs (even upper)
  if (c >= 0x139 && c <= 0x148) return ((c + 1) | 1) - 1;    // odd-upper pairs
  if (c >= 0x14A && c <= 0x177) return c | 1;
  if (c == 0x178) return 0xFF;                               // Y with diaeresis
  if (c >= 0x179 && c <= 0x17E) return ((c + 1) | 1) - 1;
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 0x20;  // Greek
  if (c >= 0x400 && c <= 0x40F) return c + 0x50;             // Cyrillic with diacritics
  if (c >= 0x410 && c <= 0x42F) return c + 0x20;             // Cyrillic base
  return c;
}

inline std::u32string fold_u32(std::u32string_view s) {
  std::u32string out(s);
  for (char32_t& c : out) c = fold_char(c);
  return out;
}

// Decode and case-fold in one step; the common path for fuzzy matching.
inline std::u32string fold_utf8(std::string_view s) {
  std::u32string out = utf8_decode(s);
  for (char32_t& c : out) c = fold_char(c);
  return out;
}

inline std::string to_lower(std::string_view s) { return utf8_encode(fold_utf8(s)); }

}  // namespace cotag
