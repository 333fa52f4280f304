# Command-line verbs, registered on the click group in app.py
