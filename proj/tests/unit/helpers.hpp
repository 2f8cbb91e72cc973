#pragma once

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

#include "readalign/corpus.hpp"
#include "readalign/error.hpp"

namespace testing {

// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("readalign_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// One article per entry of `articles`, each holding sentences of the given lengths.
inline readalign::StudyManifest small_manifest(const std::vector<std::vector<std::uint32_t>>& articles) {
  readalign::StudyManifest m;
  std::size_t word = 0;
  for (std::size_t a = 0; a < articles.size(); ++a) {
    m.articles.push_back("a" + std::to_string(a));
    for (std::size_t s = 0; s < articles[a].size(); ++s) {
      readalign::Sentence sent;
      sent.id = "a" + std::to_string(a) + "s" + std::to_string(s);
      sent.article = m.articles.back();
      for (std::uint32_t w = 0; w < articles[a][s]; ++w) sent.words.push_back("w" + std::to_string(word++));
      m.sentences.push_back(std::move(sent));
    }
  }
  m.subjects = {{"s1", true, true}};
  m.models = {{"m1", "f", readalign::ModelModality::LLM, 1, 1}};
  return m;
}

template <class Fn>
readalign::ErrorKind error_kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const readalign::Error& e) {
    return e.kind();
  }
  FAIL("expected readalign::Error");
  return readalign::ErrorKind::IOError;
}

}  // namespace testing
