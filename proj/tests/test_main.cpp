#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "sagate/common.hpp"

int main(int argc, char** argv) {
  sagate::set_nancheck(true);  // NaN tripwires on in every test
  doctest::Context ctx;
  ctx.applyCommandLine(argc, argv);
  return ctx.run();
}
