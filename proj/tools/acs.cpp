#include "acs/io.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return acs::run_cli(argc, argv, std::cout, std::cerr);
}
