from orbitshare.cli import main

main()
