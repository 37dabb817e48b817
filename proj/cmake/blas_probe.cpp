// Exit status 0 when the supernodal CHOLMOD path (dense BLAS/LAPACK kernels)
// factorizes a small SPD matrix correctly in this environment.
#include "stresstopo/assembly.hpp"

int main() { return stresstopo::detail::CholmodFactor::supernodal_usable() ? 0 : 1; }
