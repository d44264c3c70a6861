// Writes a small synthetic corpus in the raw triplet + CoNLL-U formats:
//   make_toy_corpus <raw_dir> <annotation_dir>

#include <iostream>

#include "support.hpp"

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: make_toy_corpus <raw_dir> <annotation_dir>\n";
    return 2;
  }
  using spandiff::testing::synthetic_corpus;
  using spandiff::testing::write_raw_split;
  write_raw_split(argv[1], argv[2], "train", synthetic_corpus(12, 2, 1));
  write_raw_split(argv[1], argv[2], "dev", synthetic_corpus(4, 2, 2));
  write_raw_split(argv[1], argv[2], "test", synthetic_corpus(5, 2, 3, true));
  return 0;
}
