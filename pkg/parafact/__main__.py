from parafact.main import main

main()
