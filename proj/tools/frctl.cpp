#include "fr/service.hpp"

int main(int argc, char** argv) { return fr::run_cli(argc, argv); }
