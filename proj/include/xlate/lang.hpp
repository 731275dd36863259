#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace xlate {

/// Source languages (expert order) followed by the Python target.
enum class Lang { cpp = 0, csharp = 1, js = 2, java = 3, php = 4, py = 5 };

inline constexpr std::array<Lang, 5> kSourceLangs{Lang::cpp, Lang::csharp, Lang::js, Lang::java, Lang::php};
inline constexpr int kNumSourceLangs = 5;

inline std::string_view lang_name(Lang lang) {
  switch (lang) {
    case Lang::cpp: return "cpp";
    case Lang::csharp: return "csharp";
    case Lang::js: return "js";
    case Lang::java: return "java";
    case Lang::php: return "php";
    case Lang::py: return "py";
  }
  return "?";
}

inline std::string_view lang_display(Lang lang) {
  switch (lang) {
    case Lang::cpp: return "C++";
    case Lang::csharp: return "C#";
    case Lang::js: return "JavaScript";
    case Lang::java: return "Java";
    case Lang::php: return "PHP";
    case Lang::py: return "Python";
  }
  return "?";
}

inline std::string lang_tag(Lang lang) { return "<" + std::string(lang_name(lang)) + ">"; }

inline std::optional<Lang> parse_lang(std::string_view name) {
  for (Lang l : {Lang::cpp, Lang::csharp, Lang::js, Lang::java, Lang::php, Lang::py}) {
    if (lang_name(l) == name) return l;
  }
  if (name == "javascript") return Lang::js;
  return std::nullopt;
}

inline int expert_slot(Lang lang) { return static_cast<int>(lang); }

}  // namespace xlate
