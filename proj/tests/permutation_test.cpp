#include <gtest/gtest.h>

#include <set>

#include "connlab/distributions.hpp"
#include "connlab/permutation.hpp"
#include "support.hpp"

using namespace connlab;

namespace {

Matrix as_matrix(const Permutation& p) {
  const auto n = static_cast<Eigen::Index>(p.size());
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) m(i, p[i]) = 1.0;
  return m;
}

}  // namespace

TEST(Permutation, InverseAndIdentity) {
  const Permutation p{2, 0, 3, 1};
  const auto inv = inverse(p);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(p[inv[i]], i);
  EXPECT_EQ(identity_permutation(3), (Permutation{0, 1, 2}));
}

TEST(Permutation, AllPermutationsDistinct) {
  const auto all = all_permutations(4);
  EXPECT_EQ(all.size(), 24u);
  EXPECT_EQ(std::set<Permutation>(all.begin(), all.end()).size(), 24u);
}

TEST(Permutation, RandomIsValidAndSeeded) {
  auto a = make_engine(3);
  auto b = make_engine(3);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_permutation(9, a);
    EXPECT_EQ(p, random_permutation(9, b));
    auto sorted = p;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, identity_permutation(9));
  }
}

TEST(Permutation, ConjugateMatchesMatrixProduct) {
  auto engine = make_engine(4);
  for (int t = 0; t < 10; ++t) {
    const auto p = random_permutation(6, engine);
    const Matrix pm = as_matrix(p);
    const Matrix m = testing_support::random_matrix(6, 6, engine);
    EXPECT_EQ(conjugate(m, p), pm * m * pm.transpose());
    const Matrix h = testing_support::random_matrix(6, 18, engine);
    Matrix kron = Matrix::Zero(18, 18);
    for (int c = 0; c < 3; ++c) kron.block(c * 6, c * 6, 6, 6) = pm.transpose();
    EXPECT_EQ(permute_hidden(h, p), pm * h * kron);
    const Matrix w = testing_support::random_matrix(12, 12, engine);
    Matrix k2 = Matrix::Zero(12, 12);
    for (int c = 0; c < 2; ++c) k2.block(c * 6, c * 6, 6, 6) = pm;
    EXPECT_EQ(conjugate_blocks(w, p), k2 * w * k2.transpose());
  }
}

TEST(Permutation, PermuteGraphConjugatesAdjacency) {
  auto engine = make_engine(5);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto g = sample_er(7, 0.3, s);
    const auto p = random_permutation(7, engine);
    EXPECT_EQ(augmented_adjacency(permute_graph(g, p)).values, conjugate(augmented_adjacency(g).values, p));
  }
}
